"""Metrics, the end-to-end CNN + SVM + fusion experiment, split sweeps and repeated runs."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import cnn as cnn_mod
from . import svm as svm_mod
from .dataset import SPLIT_LABELS, DatasetManifest, GrayImage, SplitSpec, split
from .fusion import PROVENANCES, FusionModel, confusion_matrix, fit_fusion

DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
DEFAULT_FRACTIONS = (0.6, 0.1, 0.2, 0.1)
DEFAULT_REPEATS = 3

# accuracies (%) reported for the original Brodatz32 and Kylberg images; used
# only to annotate reports and dataset-gated diagnostics
REFERENCE_RESULTS = {
    "brodatz": {
        "train_sweep": dict(zip(DEFAULT_GRID, (74.66, 79.79, 90.62, 92.70, 85.74, 93.35, 93.75))),
        "map_sweep": dict(zip(DEFAULT_GRID, (90.62, 90.36, 87.23, 89.45, 86.71, 90.62, 89.84))),
        "fusion": {"CNN": (98.43, 97.65, 91.40), "SVM": (98.43, 92.96, 94.53),
                   "Fusion": (98.43, 99.21, 96.87)},
        "average": {"CNN": 95.82, "SVM": 95.30, "Fusion": 98.17},
    },
    "kylberg": {
        "train_sweep": dict(zip(DEFAULT_GRID, (95.98, 98.71, 98.80, 98.54, 99.25, 99.55, 98.88))),
        "map_sweep": dict(zip(DEFAULT_GRID, (99.44, 99.44, 98.77, 98.88, 98.88, 98.88, 98.87))),
        "fusion": {"CNN": (97.32, 95.53, 95.31), "SVM": (100.0, 99.33, 99.55),
                   "Fusion": (100.0, 99.33, 99.55)},
        "average": {"CNN": 96.05, "SVM": 99.62, "Fusion": 99.62},
    },
}


# ---------------------------------------------------------------------------
# metrics


@dataclass(eq=False)
class EvaluationReport:
    accuracy: float
    recall: np.ndarray
    precision: np.ndarray
    confusion: np.ndarray

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall": self.recall.tolist(),
            "precision": self.precision.tolist(),
            "confusion": self.confusion.tolist(),
        }


def evaluate(predictions: Sequence[int], truths: Sequence[int], n_classes: int | None = None) -> EvaluationReport:
    pred = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truths, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} truths")
    if pred.size == 0:
        raise ValueError("nothing to evaluate")
    k = n_classes if n_classes is not None else int(max(pred.max(), truth.max())) + 1
    cm = confusion_matrix(truth, pred, k)
    diag = np.diag(cm).astype(np.float64)
    rows, cols = cm.sum(axis=1), cm.sum(axis=0)
    recall = np.divide(diag, rows, out=np.zeros(k), where=rows > 0)
    precision = np.divide(diag, cols, out=np.zeros(k), where=cols > 0)
    return EvaluationReport(float(np.trace(cm) / cm.sum()), recall, precision, cm)


def pct(x: float) -> str:
    return f"{100.0 * x:.2f}%"


# ---------------------------------------------------------------------------
# one experiment


@dataclass
class ExperimentSettings:
    svm: svm_mod.SvmHyperparams = field(default_factory=svm_mod.SvmHyperparams)
    stack: Sequence[dict] = cnn_mod.DEFAULT_STACK
    epochs: int = cnn_mod.BRODATZ_EPOCHS
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    fusion_repetitions: int = 1
    input_size: int = 64
    mean_only_features: bool = False

    def train_config(self, seed: int) -> cnn_mod.TrainConfig:
        return cnn_mod.TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                                   self.momentum, seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stack"] = [dict(s) for s in self.stack]
        return d


@dataclass(eq=False)
class RunResult:
    seed: int
    fractions: tuple[float, ...]
    cnn: EvaluationReport
    svm: EvaluationReport
    fused: EvaluationReport
    provenance: dict[str, int]
    fusion: FusionModel
    history: cnn_mod.History
    agreement_ok: bool

    def row(self) -> dict:
        return {
            "seed": self.seed,
            "train": self.fractions[0], "validation": self.fractions[1],
            "fusion_map": self.fractions[2], "test": self.fractions[3],
            "cnn_accuracy": self.cnn.accuracy, "svm_accuracy": self.svm.accuracy,
            "fused_accuracy": self.fused.accuracy,
            **{f"n_{k.replace('-', '_')}": v for k, v in self.provenance.items()},
        }


def run_experiment(
    manifest: DatasetManifest,
    images: Sequence[GrayImage],
    features: np.ndarray,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
    settings: ExperimentSettings | None = None,
    log: Callable | None = None,
) -> RunResult:
    """Split, train SVM and CNN, build the fusion map, score everything on the test split."""
    settings = settings or ExperimentSettings()
    spec = SplitSpec(tuple(fractions), seed)
    assignment = split(manifest, spec)
    labels = manifest.labels
    k = manifest.n_classes
    idx = {s: assignment.indices(s) for s in SPLIT_LABELS}
    tr, va, fm, te = (idx[s] for s in SPLIT_LABELS)

    svm_model = svm_mod.train_svm(features[tr], labels[tr], settings.svm, seed=seed, n_classes=k)

    model = cnn_mod.CnnModel(k, settings.input_size, settings.stack, seed=seed)
    pick = lambda ii: [images[i] for i in ii]  # noqa: E731
    model, history = cnn_mod.train(model, pick(tr), labels[tr], pick(va), labels[va],
                                   settings.train_config(seed), log=log)

    fusion = fit_fusion(model.predict(pick(fm)), svm_model.predict(features[fm]), labels[fm],
                        k, settings.fusion_repetitions, seed)

    cnn_pred = model.predict(pick(te))
    svm_pred = svm_model.predict(features[te])
    fused_pred, prov = fusion.predict(cnn_pred, svm_pred)
    agree = cnn_pred == svm_pred
    return RunResult(
        seed, spec.fractions,
        evaluate(cnn_pred, labels[te], k), evaluate(svm_pred, labels[te], k),
        evaluate(fused_pred, labels[te], k),
        {p: prov.count(p) for p in PROVENANCES}, fusion, history,
        bool(np.all(fused_pred[agree] == cnn_pred[agree])),
    )


# ---------------------------------------------------------------------------
# repeated runs and sweeps


@dataclass(eq=False)
class RepeatResult:
    runs: list[RunResult]

    def mean(self, which: str) -> float:
        return float(np.mean([getattr(r, which).accuracy for r in self.runs]))

    def rows(self) -> list[dict]:
        return [r.row() for r in self.runs]


def repeat_shuffled(experiment: Callable[[int], RunResult], n: int = DEFAULT_REPEATS,
                    seeds: Sequence[int] | None = None) -> RepeatResult:
    if n < 1:
        raise ValueError("n must be >= 1")
    seeds = list(seeds) if seeds is not None else list(range(n))
    if len(seeds) != n or len(set(seeds)) != n:
        raise ValueError("need n distinct seeds")
    return RepeatResult([experiment(s) for s in seeds])


def train_sweep_fractions(t: float) -> tuple[float, float, float, float]:
    """Train fraction ``t``; the rest goes 1:1:2 to validation / fusion-map / test."""
    r = (1.0 - t) / 4.0
    return (t, r, r, 2.0 * r)


def map_sweep_fractions(m: float) -> tuple[float, float, float, float]:
    """Fusion-map fraction ``m``; the rest goes 2:1:1 to train / validation / test."""
    r = (1.0 - m) / 4.0
    return (2.0 * r, r, m, r)


SWEEP_PARAMS = {"train": train_sweep_fractions, "map": map_sweep_fractions}


@dataclass(eq=False)
class SweepResult:
    param: str
    settings: list[float]
    results: list[RepeatResult]

    def rows(self) -> list[dict]:
        out = []
        for value, rep in sorted(zip(self.settings, self.results), key=lambda t: t[0]):
            fr = SWEEP_PARAMS[self.param](value)
            out.append({
                "param": self.param, "setting": value,
                "train": fr[0], "validation": fr[1], "fusion_map": fr[2], "test": fr[3],
                "runs": len(rep.runs),
                "cnn_accuracy": rep.mean("cnn"), "svm_accuracy": rep.mean("svm"),
                "fused_accuracy": rep.mean("fused"),
            })
        return out


def sweep(
    param: str,
    experiment: Callable[[tuple, int], RunResult],
    grid: Sequence[float] = DEFAULT_GRID,
    seeds: Sequence[int] = (0,),
) -> SweepResult:
    """Run ``experiment(fractions, seed)`` for each grid value and seed."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}")
    fractions = SWEEP_PARAMS[param]
    results = [RepeatResult([experiment(fractions(v), s) for s in seeds]) for v in grid]
    return SweepResult(param, list(grid), results)


def sweep_train_fraction(manifest, images, features, grid=DEFAULT_GRID, seeds=(0,), settings=None):
    run = lambda fr, s: run_experiment(manifest, images, features, fr, s, settings)  # noqa: E731
    return sweep("train", run, grid, seeds)


def sweep_map_fraction(manifest, images, features, grid=DEFAULT_GRID, seeds=(0,), settings=None):
    run = lambda fr, s: run_experiment(manifest, images, features, fr, s, settings)  # noqa: E731
    return sweep("map", run, grid, seeds)


def parse_grid(text: str) -> list[float]:
    """``"10:70:10"`` (percent start:stop:step, inclusive) or ``"0.1,0.6"``."""
    if ":" in text:
        start, stop, step = (int(p) for p in text.split(":"))
        if step <= 0 or stop < start:
            raise ValueError(f"bad grid {text!r}")
        return [v / 100.0 for v in range(start, stop + 1, step)]
    values = [float(p) for p in text.split(",") if p.strip()]
    return [v / 100.0 if v > 1 else v for v in values]


# ---------------------------------------------------------------------------
# report rendering


def to_csv(rows: list[dict], config_hash: str | None = None) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    fields = list(rows[0]) + (["config_hash"] if config_hash else [])
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        r = {k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()}
        if config_hash:
            r["config_hash"] = config_hash
        w.writerow(r)
    return buf.getvalue()


def sweep_markdown(result: SweepResult, dataset: str = "synthetic", reference: dict | None = None) -> str:
    title = {"train": "Training data percentage accuracy",
             "map": "Binary map accuracy per percentage of fusion-map data"}[result.param]
    head = "| Training Percentage | CNN | SVM | Fused (Classification Accuracy) |"
    sep = "|---|---|---|---|"
    if reference:
        head = head[:-1] + " Reference |"
        sep += "---|"
    lines = [f"### {title} ({dataset})", "", head, sep]
    for row in result.rows():
        label = f"{round(row['setting'] * 100)}%"
        line = (f"| {label} | {pct(row['cnn_accuracy'])} | {pct(row['svm_accuracy'])} "
                f"| {pct(row['fused_accuracy'])} |")
        if reference:
            ref = reference.get(round(row["setting"], 2))
            line += f" {ref:.2f}% |" if ref is not None else " |"
        lines.append(line)
    return "\n".join(lines) + "\n"


def fusion_markdown(rep: RepeatResult, dataset: str = "synthetic") -> str:
    n = len(rep.runs)
    head = "| | " + " | ".join(f"Exp. {i + 1}" for i in range(n)) + " | Average |"
    sep = "|---|" + "---|" * (n + 1)
    lines = [f"### Fusion results ({dataset})", "", head, sep]
    for name, attr in (("CNN", "cnn"), ("SVM", "svm"), ("Fusion", "fused")):
        vals = [getattr(r, attr).accuracy for r in rep.runs]
        lines.append(f"| {name} | " + " | ".join(pct(v) for v in vals) + f" | {pct(np.mean(vals))} |")
    prov = {p: sum(r.provenance[p] for r in rep.runs) for p in PROVENANCES}
    lines += ["", "Fused decisions by source: " + ", ".join(f"{k} {v}" for k, v in prov.items())]
    return "\n".join(lines) + "\n"


def reference_diagnostic(rep: RepeatResult, dataset: str, threshold: float) -> tuple[bool, str]:
    """Compare a 3-run average with the reference figures for a real dataset."""
    ref = REFERENCE_RESULTS[dataset]["average"]
    got = {"CNN": rep.mean("cnn") * 100, "SVM": rep.mean("svm") * 100, "Fusion": rep.mean("fused") * 100}
    ok = got["Fusion"] >= threshold
    lines = [f"{dataset}: fused {got['Fusion']:.2f}% (threshold {threshold:.2f}%) -> {'PASS' if ok else 'FAIL'}"]
    for name in ("CNN", "SVM", "Fusion"):
        lines.append(f"  {name:6s} ours {got[name]:6.2f}%  reference {ref[name]:6.2f}%  "
                     f"delta {got[name] - ref[name]:+6.2f}")
    return ok, "\n".join(lines)
