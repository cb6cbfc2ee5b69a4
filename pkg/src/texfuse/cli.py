"""``texfuse`` command-line harness.

Every stage reads its inputs from and writes its outputs to one output
directory, so the chain can be run, inspected and resumed one step at a time::

    synth | ingest -> manifest.json
    split          -> split.json                  (manifest + per-sample split label)
    features       -> features.txf, features.json
    train-svm      -> svm.json
    train-cnn      -> cnn.txc, cnn.json
    fuse           -> fusion.json
    evaluate       -> evaluation.{json,csv,md}, confusion_*.png
    sweep          -> sweep_<param>.{json,csv,md,png}
    report         -> report.{md,csv}, *.png

Settings come from a JSON config (``--config``) merged over the defaults;
command flags override the file. Failures print a single line
``texfuse: error: <code>: <message>`` to stderr and exit with status 1.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import click
import numpy as np
from threadpoolctl import threadpool_limits

from . import cnn as cnn_mod
from . import evaluation as ev
from . import glcm
from . import plotting
from . import svm as svm_mod
from .artifacts import TexfuseError, atomic_write_text, config_hash, read_json, write_json
from .dataset import (SPLIT_LABELS, DatasetManifest, SplitSpec, generate_synthetic, load_images,
                      load_manifest, manifest_to_dict, save_pgm, scan_directory, split)
from .fusion import CNN, PROVENANCES, SVM, TIE_RULE, FusionModel, fit_fusion, load_fusion, save_fusion

MANIFEST = "manifest.json"
SPLIT = "split.json"
FEATURES = "features.txf"
FEATURES_META = "features.json"
SVM_MODEL = "svm.json"
CNN_MODEL = "cnn.txc"
CNN_META = "cnn.json"
FUSION = "fusion.json"
EVALUATION = "evaluation.json"

# which command produces each artifact, for missing-dependency errors
PRODUCERS = {
    MANIFEST: "synth or ingest",
    SPLIT: "split",
    FEATURES: "features",
    SVM_MODEL: "train-svm",
    CNN_MODEL: "train-cnn",
    FUSION: "fuse",
    EVALUATION: "evaluate",
}

DEFAULT_CONFIG = {
    "output_dir": "texfuse-out",
    "dataset": {
        "root": None,
        "size": 64,
        "synthetic": {"classes": 8, "per_class": 64, "size": 64, "seed": 7, "noise": 40.0},
    },
    "split": {"fractions": list(ev.DEFAULT_FRACTIONS), "seed": 1},
    "features": {"mean_only": False},
    "svm": {"C": svm_mod.DEFAULT_C, "gamma": svm_mod.DEFAULT_GAMMA, "tolerance": 1e-3,
            "max_passes": 100, "seed": 0},
    "cnn": {"stack": "default", "epochs": cnn_mod.BRODATZ_EPOCHS, "batch_size": 32,
            "learning_rate": 0.01, "momentum": 0.9, "seed": 0},
    "fusion": {"tie_rule": TIE_RULE, "repetitions": 1, "seed": 0},
    "sweep": {"param": "train", "grid": "10:70:10", "seeds": [0]},
    "report": {"runs": 0, "seeds": None, "reference": None},
}

# keys that do not influence any result and so stay out of the config hash
_UNHASHED = ("output_dir",)


class ConfigError(TexfuseError):
    code = "bad-config"


class MissingArtifactError(TexfuseError):
    code = "missing-dependency"


# ---------------------------------------------------------------------------
# config


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict) -> dict:
    """Check every field against the owning module's invariants; returns ``cfg``."""
    try:
        SplitSpec(tuple(float(f) for f in cfg["split"]["fractions"]), int(cfg["split"]["seed"]))
        svm_hyperparams(cfg)
        if not 0 <= int(cfg["svm"]["seed"]) < 2**64:
            raise ValueError("svm.seed must be a u64")
        stack_of(cfg)
        train_config(cfg)
        if cfg["fusion"]["tie_rule"] != TIE_RULE:
            raise ValueError(f"fusion.tie_rule must be {TIE_RULE!r}")
        if int(cfg["fusion"]["repetitions"]) < 1:
            raise ValueError("fusion.repetitions must be >= 1")
        if int(cfg["dataset"]["size"]) < 2:
            raise ValueError("dataset.size must be >= 2")
        syn = cfg["dataset"]["synthetic"]
        if int(syn["classes"]) < 2 or int(syn["per_class"]) < 4 or int(syn["size"]) < 2:
            raise ValueError("synthetic needs classes >= 2, per_class >= 4, size >= 2")
        if float(syn["noise"]) < 0:
            raise ValueError("synthetic.noise must be >= 0")
        if cfg["sweep"]["param"] not in ev.SWEEP_PARAMS:
            raise ValueError(f"sweep.param must be one of {sorted(ev.SWEEP_PARAMS)}")
        ev.parse_grid(str(cfg["sweep"]["grid"]))
        if int(cfg["report"]["runs"]) < 0:
            raise ValueError("report.runs must be >= 0")
        if cfg["report"]["reference"] not in (None, *ev.REFERENCE_RESULTS):
            raise ValueError(f"report.reference must be one of {sorted(ev.REFERENCE_RESULTS)}")
    except (TexfuseError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        doc = read_json(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return _merge(DEFAULT_CONFIG, doc)


def hash_of(cfg: dict) -> str:
    return config_hash({k: v for k, v in cfg.items() if k not in _UNHASHED})


def svm_hyperparams(cfg: dict) -> svm_mod.SvmHyperparams:
    s = cfg["svm"]
    return svm_mod.SvmHyperparams(float(s["C"]), float(s["gamma"]), float(s["tolerance"]),
                                  int(s["max_passes"]))


def stack_of(cfg: dict):
    stack = cfg["cnn"]["stack"]
    if isinstance(stack, str):
        if stack not in cnn_mod.STACKS:
            raise ValueError(f"cnn.stack must be one of {sorted(cnn_mod.STACKS)} or a layer list")
        return cnn_mod.STACKS[stack]
    if not isinstance(stack, list) or not all(isinstance(s, dict) and "kind" in s for s in stack):
        raise ValueError("cnn.stack layers must be objects with a 'kind'")
    return stack


def train_config(cfg: dict) -> cnn_mod.TrainConfig:
    c = cfg["cnn"]
    return cnn_mod.TrainConfig(int(c["epochs"]), int(c["batch_size"]), float(c["learning_rate"]),
                               float(c["momentum"]), int(c["seed"]))


def settings_of(cfg: dict) -> ev.ExperimentSettings:
    c = cfg["cnn"]
    return ev.ExperimentSettings(
        svm=svm_hyperparams(cfg), stack=stack_of(cfg), epochs=int(c["epochs"]),
        batch_size=int(c["batch_size"]), learning_rate=float(c["learning_rate"]),
        momentum=float(c["momentum"]), fusion_repetitions=int(cfg["fusion"]["repetitions"]),
        input_size=int(cfg["dataset"]["size"]), mean_only_features=bool(cfg["features"]["mean_only"]),
    )


# ---------------------------------------------------------------------------
# run context


class Run:
    """Effective config plus output-directory helpers for one command."""

    def __init__(self, cfg: dict):
        self.cfg = validate_config(cfg)
        self.hash = hash_of(cfg)
        self.out = Path(cfg["output_dir"])

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str, for_command: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(
                f"{for_command} needs {name} in {self.out} (run `texfuse {PRODUCERS[name]}` first)"
            )
        return p

    def write_json(self, name: str, doc: dict) -> Path:
        return write_json(self.path(name), {**doc, "config_hash": self.hash})

    def write_text(self, name: str, text: str) -> Path:
        return atomic_write_text(self.path(name), text)

    def markdown(self, body: str) -> str:
        return body.rstrip("\n") + f"\n\n<!-- config_hash: {self.hash} -->\n"

    # -- upstream artifacts ---------------------------------------------

    def manifest(self, command: str) -> DatasetManifest:
        manifest, _, _ = load_manifest(self.require(MANIFEST, command))
        return manifest

    def split(self, command: str):
        manifest, spec, assignment = load_manifest(self.require(SPLIT, command))
        if assignment is None:
            raise TexfuseError(f"{SPLIT} has no split assignment", code="bad-split-file")
        return manifest, spec, assignment

    def features(self, command: str) -> tuple[np.ndarray, np.ndarray]:
        return glcm.read_feature_cache(self.require(FEATURES, command))

    def images(self, manifest: DatasetManifest):
        return load_images(manifest, int(self.cfg["dataset"]["size"]))


# ---------------------------------------------------------------------------
# CLI plumbing


def _emit_error(code: str, message: str) -> None:
    msg = " ".join(str(message).split())
    click.echo(f"texfuse: error: {code}: {msg}", err=True)


class TexfuseGroup(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except TexfuseError as exc:
            _emit_error(exc.code, exc)
            ctx.exit(1)
        except (OSError, ValueError) as exc:
            _emit_error("io-error" if isinstance(exc, OSError) else "invalid-value", exc)
            ctx.exit(1)


def _threads_from_env() -> int | None:
    raw = os.environ.get("TEXFUSE_THREADS")
    if raw in (None, ""):
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TEXFUSE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("TEXFUSE_THREADS must be >= 1")
    return n


@click.group(cls=TexfuseGroup)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON config merged over the defaults.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides output_dir in the config).")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="BLAS/OpenMP thread cap; 1 gives bit-reproducible models. Env: TEXFUSE_THREADS.")
@click.pass_context
def main(ctx, config_path, out_dir, threads):
    """Hybrid GLCM-SVM / CNN texture classification with confusion-matrix fusion."""
    cfg = load_config(config_path)
    if out_dir is not None:
        cfg["output_dir"] = out_dir
    ctx.obj = cfg
    threads = threads if threads is not None else _threads_from_env()
    if threads is not None:
        ctx.with_resource(threadpool_limits(limits=threads))


def _override(cfg: dict, section: str, **values) -> dict:
    for key, value in values.items():
        if value is not None:
            cfg[section][key] = value
    return cfg


def _fractions(text: str | None):
    if text is None:
        return None
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"fractions must be comma-separated numbers, got {text!r}") from None


def _seeds(text: str | None):
    if text is None:
        return None
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"seeds must be comma-separated integers, got {text!r}") from None


def _say(msg: str) -> None:
    click.echo(msg, err=True)


# ---------------------------------------------------------------------------
# dataset stages


@main.command()
@click.option("--root", type=click.Path(exists=True, file_okay=False), default=None,
              help="Dataset directory laid out as <root>/<class>/*.pgm|*.png.")
@click.pass_obj
def ingest(cfg, root):
    """Index an image directory into manifest.json."""
    if root is not None:
        cfg["dataset"]["root"] = str(Path(root).resolve())
    if cfg["dataset"]["root"] is None:
        raise ConfigError("ingest needs --root or dataset.root in the config")
    run = Run(cfg)
    manifest = scan_directory(cfg["dataset"]["root"])
    run.write_json(MANIFEST, manifest_to_dict(manifest))
    _say(f"{len(manifest.samples)} images in {manifest.n_classes} classes -> {run.path(MANIFEST)}")


@main.command()
@click.option("--classes", type=int, default=None)
@click.option("--per-class", type=int, default=None)
@click.option("--size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--noise", type=float, default=None, help="Gaussian noise std in gray levels.")
@click.pass_obj
def synth(cfg, classes, per_class, size, seed, noise):
    """Render a procedural texture dataset into <out>/data and write manifest.json."""
    syn = cfg["dataset"]["synthetic"]
    for key, value in (("classes", classes), ("per_class", per_class), ("size", size),
                       ("seed", seed), ("noise", noise)):
        if value is not None:
            syn[key] = value
    if size is not None:
        cfg["dataset"]["size"] = size
    run = Run(cfg)
    manifest, images = generate_synthetic(int(syn["classes"]), int(syn["per_class"]),
                                          int(syn["size"]), int(syn["seed"]), float(syn["noise"]))
    data = run.path("data")
    for (rel, _), img in zip(manifest.samples, images):
        save_pgm(data / rel, img, comment=f"texfuse config_hash {run.hash}")
    doc = manifest_to_dict(manifest)
    doc["root"] = "data"
    doc["synthetic"] = dict(syn)
    run.write_json(MANIFEST, doc)
    _say(f"{len(images)} images in {manifest.n_classes} classes -> {data}")


@main.command("split")
@click.option("--fractions", default=None, help="train,validation,fusion-map,test e.g. 0.6,0.1,0.2,0.1")
@click.option("--seed", type=int, default=None)
@click.pass_obj
def split_cmd(cfg, fractions, seed):
    """Assign every sample to train / validation / fusion-map / test (split.json)."""
    _override(cfg, "split", fractions=_fractions(fractions), seed=seed)
    run = Run(cfg)
    manifest_path = run.require(MANIFEST, "split")
    manifest, _, _ = load_manifest(manifest_path)
    spec = SplitSpec(tuple(float(f) for f in cfg["split"]["fractions"]), int(cfg["split"]["seed"]))
    assignment = split(manifest, spec)
    # keep the root exactly as recorded so the file does not depend on where it was run
    raw_root = read_json(manifest_path).get("root")
    run.write_json(SPLIT, manifest_to_dict(manifest, spec, assignment, root=raw_root,
                                           sizes=assignment.sizes()))
    sizes = assignment.sizes()
    _say(" ".join(f"{k}={sizes[k]}" for k in SPLIT_LABELS))


# ---------------------------------------------------------------------------
# features and models


@main.command()
@click.option("--mean-only/--all-directions", default=None,
              help="39 direction-averaged features instead of all 195.")
@click.pass_obj
def features(cfg, mean_only):
    """Compute GLCM/Haralick features for every sample (features.txf)."""
    _override(cfg, "features", mean_only=mean_only)
    run = Run(cfg)
    manifest = run.manifest("features")
    images = run.images(manifest)
    x = glcm.extract_matrix(images, mean_only=bool(cfg["features"]["mean_only"]))
    glcm.write_feature_cache(run.path(FEATURES), x, manifest.labels)
    run.write_json(FEATURES_META, {
        "file": FEATURES, "samples": int(x.shape[0]), "dim": int(x.shape[1]),
        "levels": glcm.LEVELS, "distances": list(glcm.DISTANCES),
        "offsets": [list(o) for o in glcm.OFFSETS], "features": list(glcm.HARALICK_NAMES),
        "mean_only": bool(cfg["features"]["mean_only"]),
    })
    _say(f"{x.shape[0]} x {x.shape[1]} features -> {run.path(FEATURES)}")


@main.command("train-svm")
@click.option("--C", "c_value", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_obj
def train_svm_cmd(cfg, c_value, gamma, seed):
    """Fit the one-vs-one RBF SVM on the train split (svm.json)."""
    _override(cfg, "svm", C=c_value, gamma=gamma, seed=seed)
    run = Run(cfg)
    manifest, _, assignment = run.split("train-svm")
    x, y = run.features("train-svm")
    if len(y) != len(manifest.samples):
        raise TexfuseError(f"{FEATURES} has {len(y)} rows but the split has "
                           f"{len(manifest.samples)} samples", code="stale-artifact")
    tr = assignment.indices("train")
    model = svm_mod.train_svm(x[tr], y[tr], svm_hyperparams(cfg), seed=int(cfg["svm"]["seed"]),
                              n_classes=manifest.n_classes)
    svm_mod.save_model(run.path(SVM_MODEL), model, classes=list(manifest.classes),
                       config_hash=run.hash)
    n_sv = sum(len(m.dual_coef) for m in model.machines.values())
    _say(f"{len(model.machines)} binary machines, {n_sv} support vectors -> {run.path(SVM_MODEL)}")


@main.command("train-cnn")
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--stack", default=None, help="Preset name (default, deep).")
@click.option("--seed", type=int, default=None)
@click.option("--verbose", is_flag=True, help="Log loss and validation accuracy per epoch.")
@click.pass_obj
def train_cnn_cmd(cfg, epochs, batch_size, learning_rate, stack, seed, verbose):
    """Train the CNN on the train split, keeping the best validation epoch (cnn.txc)."""
    _override(cfg, "cnn", epochs=epochs, batch_size=batch_size, learning_rate=learning_rate,
              stack=stack, seed=seed)
    run = Run(cfg)
    manifest, _, assignment = run.split("train-cnn")
    images = run.images(manifest)
    labels = manifest.labels
    tr, va = assignment.indices("train"), assignment.indices("validation")
    model = cnn_mod.CnnModel(manifest.n_classes, int(cfg["dataset"]["size"]), stack_of(cfg),
                             seed=int(cfg["cnn"]["seed"]))
    log = (lambda e, loss, acc: _say(f"epoch {e + 1}: loss {loss:.4f} val {acc:.4f}")) if verbose else None
    try:
        model, history = cnn_mod.train(model, [images[i] for i in tr], labels[tr],
                                       [images[i] for i in va], labels[va], train_config(cfg), log=log)
    except cnn_mod.CnnDivergenceError as exc:
        if exc.history is not None:
            run.write_json("cnn_diverged.json", {"error": str(exc), "history": exc.history.to_dict()})
        raise
    cnn_mod.save_model(run.path(CNN_MODEL), model)
    run.write_json(CNN_META, {
        "file": CNN_MODEL, "classes": list(manifest.classes), "input_size": model.input_size,
        "stack": model.stack, "train": vars(train_config(cfg)), "history": history.to_dict(),
    })
    _say(f"best validation accuracy {history.best_val_accuracy:.4f} at epoch "
         f"{history.best_epoch + 1} -> {run.path(CNN_MODEL)}")


def _load_models(run: Run, command: str):
    svm_path = run.require(SVM_MODEL, command)
    cnn_path = run.require(CNN_MODEL, command)
    return svm_mod.load_model(svm_path), cnn_mod.load_model(cnn_path)


def _map_invariant(fm: FusionModel) -> bool:
    cs, ss = fm.cnn_stats.recall, fm.svm_stats.recall
    return all((cs[c] >= ss[c]) if owner == CNN else (ss[c] >= cs[c])
               for c, owner in enumerate(fm.binary_map))


@main.command()
@click.option("--repetitions", type=int, default=None,
              help="Bootstrap resamples of the fusion-map split to average rates over.")
@click.pass_obj
def fuse(cfg, repetitions):
    """Build the per-class binary map and confidence rates on the fusion-map split (fusion.json)."""
    _override(cfg, "fusion", repetitions=repetitions)
    run = Run(cfg)
    manifest, _, assignment = run.split("fuse")
    svm_model, cnn_model = _load_models(run, "fuse")
    x, _ = run.features("fuse")
    fm_idx = assignment.indices("fusion-map")
    images = run.images(manifest)
    labels = manifest.labels
    cnn_pred = cnn_model.predict([images[i] for i in fm_idx])
    svm_pred = svm_model.predict(x[fm_idx])
    fm = fit_fusion(cnn_pred, svm_pred, labels[fm_idx], manifest.n_classes,
                    int(cfg["fusion"]["repetitions"]), int(cfg["fusion"]["seed"]))
    fm.models = {"cnn": CNN_MODEL, "svm": SVM_MODEL}
    save_fusion(run.path(FUSION), fm, classes=list(manifest.classes),
                map_invariant=_map_invariant(fm), config_hash=run.hash)
    counts = {k: fm.binary_map.count(k) for k in (CNN, SVM)}
    _say(f"binary map: {counts[CNN]} classes -> CNN, {counts[SVM]} -> SVM ({run.path(FUSION)})")


# ---------------------------------------------------------------------------
# evaluation, sweeps, report


def _eval_rows(reports: dict, n: int) -> list[dict]:
    return [{"classifier": name, "n_test": n, "accuracy": r.accuracy,
             "mean_recall": float(np.mean(r.recall)), "mean_precision": float(np.mean(r.precision))}
            for name, r in reports.items()]


@main.command()
@click.pass_obj
def evaluate(cfg):
    """Score CNN, SVM and the fused system on the test split."""
    run = Run(cfg)
    manifest, _, assignment = run.split("evaluate")
    svm_model, cnn_model = _load_models(run, "evaluate")
    fm = load_fusion(run.require(FUSION, "evaluate"))
    x, _ = run.features("evaluate")
    te = assignment.indices("test")
    images = run.images(manifest)
    truth = manifest.labels[te]
    k = manifest.n_classes
    cnn_pred = cnn_model.predict([images[i] for i in te])
    svm_pred = svm_model.predict(x[te])
    fused_pred, prov = fm.predict(cnn_pred, svm_pred)
    reports = {"CNN": ev.evaluate(cnn_pred, truth, k), "SVM": ev.evaluate(svm_pred, truth, k),
               "Fused": ev.evaluate(fused_pred, truth, k)}
    agree = cnn_pred == svm_pred
    doc = {
        "classes": list(manifest.classes),
        "n_test": int(len(te)),
        "reports": {name: r.to_dict() for name, r in reports.items()},
        "provenance": {p: prov.count(p) for p in PROVENANCES},
        "agreement": int(agree.sum()),
        "agreement_dominance": bool(np.all(fused_pred[agree] == cnn_pred[agree])),
        "map_invariant": _map_invariant(fm),
        "binary_map": fm.binary_map,
    }
    run.write_json(EVALUATION, doc)
    run.write_text("evaluation.csv", ev.to_csv(_eval_rows(reports, len(te)), run.hash))
    run.write_text("evaluation.md", run.markdown(_evaluation_markdown(doc)))
    for name, r in reports.items():
        plotting.confusion_figure(r.confusion, manifest.classes,
                                  run.path(f"confusion_{name.lower()}.png"), f"{name} (test)",
                                  config_hash=run.hash)
    _say("  ".join(f"{name} {ev.pct(r.accuracy)}" for name, r in reports.items()))


def _evaluation_markdown(doc: dict) -> str:
    reps = doc["reports"]
    lines = ["### Test-split accuracy", "", "| | CNN | SVM | Fused |", "|---|---|---|---|",
             "| Accuracy | " + " | ".join(ev.pct(reps[n]["accuracy"]) for n in ("CNN", "SVM", "Fused")) + " |",
             "", "### Per-class recall", "", "| Class | Map | CNN | SVM | Fused |", "|---|---|---|---|---|"]
    for c, name in enumerate(doc["classes"]):
        lines.append(f"| {name} | {doc['binary_map'][c]} | "
                     + " | ".join(ev.pct(reps[n]["recall"][c]) for n in ("CNN", "SVM", "Fused")) + " |")
    lines += ["", f"Test samples: {doc['n_test']}; classifiers agreed on {doc['agreement']}.",
              "Fused decisions by source: " + ", ".join(f"{k} {v}" for k, v in doc["provenance"].items())]
    return "\n".join(lines)


def _experiment_inputs(run: Run, command: str):
    manifest = run.manifest(command)
    images = run.images(manifest)
    feat_path = run.path(FEATURES)
    if feat_path.exists():
        x, y = glcm.read_feature_cache(feat_path)
        if len(y) != len(manifest.samples):
            raise TexfuseError(f"{FEATURES} does not match {MANIFEST}", code="stale-artifact")
    else:
        x = glcm.extract_matrix(images, mean_only=bool(run.cfg["features"]["mean_only"]))
    return manifest, images, x


@main.command("sweep")
@click.option("--param", type=click.Choice(sorted(ev.SWEEP_PARAMS)), default=None,
              help="train: vary the training share; map: vary the fusion-map share.")
@click.option("--grid", default=None, help="Percent start:stop:step (e.g. 10:70:10) or a list 0.1,0.6.")
@click.option("--seeds", default=None, help="Comma-separated split/init seeds averaged per setting.")
@click.option("--epochs", type=int, default=None, help="CNN epochs per run.")
@click.option("--verbose", is_flag=True)
@click.pass_obj
def sweep_cmd(cfg, param, grid, seeds, epochs, verbose):
    """Re-run the whole experiment across a grid of split fractions."""
    _override(cfg, "sweep", param=param, grid=grid, seeds=_seeds(seeds))
    _override(cfg, "cnn", epochs=epochs)
    run = Run(cfg)
    manifest, images, x = _experiment_inputs(run, "sweep")
    settings = settings_of(cfg)
    values = ev.parse_grid(str(cfg["sweep"]["grid"]))
    name = cfg["sweep"]["param"]

    def one(fractions, seed):
        r = ev.run_experiment(manifest, images, x, fractions, seed, settings)
        if verbose:
            _say(f"{name} {fractions}: seed {seed} CNN {ev.pct(r.cnn.accuracy)} "
                 f"SVM {ev.pct(r.svm.accuracy)} fused {ev.pct(r.fused.accuracy)}")
        return r

    result = ev.sweep(name, one, values, [int(s) for s in cfg["sweep"]["seeds"]])
    rows = result.rows()
    stem = f"sweep_{name}"
    ref = cfg["report"]["reference"]
    reference = ev.REFERENCE_RESULTS[ref][f"{name}_sweep"] if ref else None
    run.write_json(f"{stem}.json", {"param": name, "rows": rows, "settings": settings.to_dict()})
    run.write_text(f"{stem}.csv", ev.to_csv(rows, run.hash))
    run.write_text(f"{stem}.md", run.markdown(ev.sweep_markdown(result, _dataset_label(cfg), reference)))
    plotting.sweep_figure(rows, run.path(f"{stem}.png"), reference=reference, config_hash=run.hash)
    _say(f"{len(rows)} settings -> {run.path(stem + '.csv')}")


def _dataset_label(cfg: dict) -> str:
    return cfg["report"]["reference"] or ("synthetic" if cfg["dataset"]["root"] is None else "dataset")


@main.command()
@click.option("--runs", type=int, default=None,
              help="Also run this many shuffled experiments (fresh split per seed) and tabulate them.")
@click.option("--seeds", default=None, help="Seeds for --runs (default 0..runs-1).")
@click.option("--reference", type=click.Choice(sorted(ev.REFERENCE_RESULTS)), default=None,
              help="Compare against the published figures for this dataset.")
@click.option("--threshold", type=float, default=None,
              help="With --reference, minimum mean fused accuracy (%) for a PASS line.")
@click.pass_obj
def report(cfg, runs, seeds, reference, threshold):
    """Collect evaluation and sweep outputs into report.md / report.csv with figures."""
    _override(cfg, "report", runs=runs, seeds=_seeds(seeds), reference=reference)
    run = Run(cfg)
    sections, rows = ["# texfuse report", "", f"Config hash `{run.hash}`."], []

    split_path = run.path(SPLIT)
    if split_path.exists():
        doc = read_json(split_path)
        sizes = doc.get("sizes") or {}
        sections += ["", f"Dataset: {len(doc['samples'])} images, {len(doc['classes'])} classes. "
                     "Split: " + ", ".join(f"{k} {sizes.get(k, 0)}" for k in SPLIT_LABELS) + "."]

    eval_path = run.path(EVALUATION)
    if eval_path.exists():
        doc = read_json(eval_path)
        sections += ["", _evaluation_markdown(doc), "",
                     "![CNN confusion](confusion_cnn.png) ![SVM confusion](confusion_svm.png) "
                     "![Fused confusion](confusion_fused.png)"]
        for name, r in doc["reports"].items():
            rows.append({"source": "evaluate", "setting": "", "seed": "", "classifier": name,
                         "accuracy": r["accuracy"]})

    meta_path = run.path(CNN_META)
    if meta_path.exists():
        h = read_json(meta_path)["history"]
        plotting.history_figure(h["train_loss"], h["val_accuracy"], run.path("cnn_history.png"),
                                h["best_epoch"], config_hash=run.hash)
        sections += ["", "### CNN training", "",
                     f"Best validation accuracy {ev.pct(h['best_val_accuracy'])} at epoch "
                     f"{h['best_epoch'] + 1} of {len(h['train_loss'])}.", "",
                     "![CNN training history](cnn_history.png)"]

    for name in sorted(ev.SWEEP_PARAMS):
        stem = f"sweep_{name}"
        if run.path(f"{stem}.json").exists():
            md = run.path(f"{stem}.md").read_text(encoding="utf-8").split("\n<!--")[0]
            sections += ["", md.rstrip(), "", f"![{name} sweep]({stem}.png)"]
            for r in read_json(run.path(f"{stem}.json"))["rows"]:
                for clf, key in (("CNN", "cnn_accuracy"), ("SVM", "svm_accuracy"), ("Fused", "fused_accuracy")):
                    rows.append({"source": stem, "setting": r["setting"], "seed": "", "classifier": clf,
                                 "accuracy": r[key]})

    n_runs = int(cfg["report"]["runs"])
    if n_runs:
        manifest, images, x = _experiment_inputs(run, "report")
        settings = settings_of(cfg)
        fractions = tuple(float(f) for f in cfg["split"]["fractions"])
        rep = ev.repeat_shuffled(lambda s: ev.run_experiment(manifest, images, x, fractions, s, settings),
                                 n_runs, cfg["report"]["seeds"])
        label = _dataset_label(cfg)
        plotting.runs_figure(rep.rows(), run.path("fusion_runs.png"), f"Fusion results ({label})",
                             config_hash=run.hash)
        run.write_text("fusion_runs.csv", ev.to_csv(rep.rows(), run.hash))
        sections += ["", ev.fusion_markdown(rep, label).rstrip(), "", "![Fusion runs](fusion_runs.png)"]
        for r in rep.runs:
            for clf, attr in (("CNN", "cnn"), ("SVM", "svm"), ("Fused", "fused")):
                rows.append({"source": "runs", "setting": "", "seed": r.seed, "classifier": clf,
                             "accuracy": getattr(r, attr).accuracy})
        if cfg["report"]["reference"]:
            limit = threshold if threshold is not None else 0.0
            ok, text = ev.reference_diagnostic(rep, cfg["report"]["reference"], limit)
            sections += ["", "```", text, "```"]
            _say(text)

    if not rows:
        raise MissingArtifactError(
            f"report found nothing to collect in {run.out} "
            f"(run `texfuse evaluate` or `texfuse sweep`, or pass --runs)")
    run.write_text("report.md", run.markdown("\n".join(sections)))
    run.write_text("report.csv", ev.to_csv(rows, run.hash))
    _say(f"report -> {run.path('report.md')}")


if __name__ == "__main__":  # pragma: no cover
    main()
