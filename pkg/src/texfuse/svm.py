"""Multiclass RBF-kernel soft-margin SVM trained with SMO.

Each binary subproblem solves the standard dual

    maximise  W(a) = sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t.      0 <= a_i <= C,  sum_i a_i y_i = 0

two multipliers at a time. The working pair is the maximal violating pair
(first-order selection); among equally violating candidates a seeded shuffle
decides, so training is deterministic for a given seed. Optimisation stops
once the KKT gap ``m(a) - M(a)`` drops below ``tolerance``, which with the bias
placed inside ``[M, m]`` certifies every training point's KKT condition
within ``tolerance``.

Multiclass decisions are one-vs-one with majority voting; vote ties go to
the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .artifacts import TexfuseError, read_json, write_json

DEFAULT_C = 2048.0
DEFAULT_GAMMA = 0.0313


class SmoConvergenceError(TexfuseError):
    """SMO hit its iteration budget; ``best`` holds the last iterate as a BinarySvm."""

    code = "smo-no-convergence"

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SvmHyperparams:
    C: float = DEFAULT_C
    gamma: float = DEFAULT_GAMMA
    tolerance: float = 1e-3
    max_passes: int = 100

    def __post_init__(self):
        if not self.C > 0 or not self.gamma > 0:
            raise ValueError("C and gamma must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


# ---------------------------------------------------------------------------
# scaling


@dataclass(eq=False)
class ScalerParams:
    minimum: np.ndarray
    maximum: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.minimum.shape[0]:
            raise ValueError(f"expected {self.minimum.shape[0]} features, got {x.shape[-1]}")
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (x - self.minimum) / safe, 0.0)


def fit_scaler(train: np.ndarray) -> ScalerParams:
    train = np.atleast_2d(np.asarray(train, dtype=np.float64))
    if train.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty matrix")
    return ScalerParams(train.min(axis=0), train.max(axis=0))


def apply_scaler(params: ScalerParams, x: np.ndarray) -> np.ndarray:
    return params.transform(x)


# ---------------------------------------------------------------------------
# kernel


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("dimension mismatch")
    d = x - y
    return float(np.exp(-gamma * (d @ d)))


def rbf_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


# ---------------------------------------------------------------------------
# binary SMO


@dataclass(eq=False)
class BinarySvm:
    """Decision ``f(x) = sum_i coef_i K(sv_i, x) + bias``; f > 0 votes ``positive``."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    positive: int = 0
    negative: int = 1
    gamma: float = DEFAULT_GAMMA
    objective_history: list[float] = field(default_factory=list)

    def decision(self, x: np.ndarray) -> np.ndarray:
        k = rbf_matrix(np.atleast_2d(x), self.support_vectors, self.gamma)
        return k @ self.dual_coef + self.bias


@dataclass(eq=False)
class SmoState:
    """Full solver state, kept for KKT inspection in tests."""

    alpha: np.ndarray
    y: np.ndarray
    gram: np.ndarray
    bias: float
    objective_history: list[float]

    def decision(self) -> np.ndarray:
        return self.gram @ (self.alpha * self.y) + self.bias


def dual_objective(alpha: np.ndarray, y: np.ndarray, gram: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ gram @ ay)


def _index_sets(alpha, y, C):
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    return up, low


def kkt_gap(alpha, y, grad, C) -> float:
    """``m - M``: the largest KKT violation of a feasible dual point (<= 0 at optimum)."""
    score = -y * grad
    up, low = _index_sets(alpha, y, C)
    if not up.any() or not low.any():
        return 0.0
    return float(score[up].max() - score[low].min())


def _bias(alpha, y, grad, C):
    # -y_i * grad_i equals b for every free vector at the optimum
    score = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(score[free].mean())
    up, low = _index_sets(alpha, y, C)
    m = score[up].max() if up.any() else score[low].max()
    M = score[low].min() if low.any() else score[up].min()
    return 0.5 * float(m + M)


def smo_solve(
    x: np.ndarray,
    y: np.ndarray,
    hp: SvmHyperparams,
    seed: int = 0,
    max_iter: int | None = None,
) -> SmoState:
    """Solve one binary dual; raises SmoConvergenceError after the iteration budget."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    C = float(hp.C)
    gram = rbf_matrix(x, x, hp.gamma)
    Q = gram * np.outer(y, y)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of -W
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    tau = 1e-12
    sweep = max(n, 1)
    if max_iter is None:
        max_iter = max(hp.max_passes, 1) * sweep * 50
    history = [0.0]
    stalled = 0
    best_obj = 0.0

    for it in range(1, max_iter + 1):
        score = -y * grad
        up, low = _index_sets(alpha, y, C)
        s_up = np.where(up, score, -np.inf)[order]
        s_low = np.where(low, score, np.inf)[order]
        i = int(order[np.argmax(s_up)])
        j = int(order[np.argmin(s_low)])
        if score[i] - score[j] <= hp.tolerance:
            break
        # move along u = y_i e_i - y_j e_j by t >= 0
        quad = Q[i, i] + Q[j, j] - 2.0 * y[i] * y[j] * Q[i, j]
        quad = max(quad, tau)
        t = (score[i] - score[j]) / quad
        # box limits for a_i + y_i t and a_j - y_j t
        t_max_i = (C - alpha[i]) if y[i] > 0 else alpha[i]
        t_max_j = alpha[j] if y[j] > 0 else (C - alpha[j])
        t = min(t, t_max_i, t_max_j)
        ai, aj = alpha[i], alpha[j]
        alpha[i] = (C if y[i] > 0 else 0.0) if t == t_max_i else ai + y[i] * t
        alpha[j] = (0.0 if y[j] > 0 else C) if t == t_max_j else aj - y[j] * t
        grad += Q[:, i] * (alpha[i] - ai) + Q[:, j] * (alpha[j] - aj)

        if it % sweep == 0:
            obj = dual_objective(alpha, y, gram)
            history.append(obj)
            if obj > best_obj * (1 + 1e-12) + 1e-15:
                best_obj = obj
                stalled = 0
            else:
                stalled += 1
            if stalled >= hp.max_passes:
                break

    if kkt_gap(alpha, y, grad, C) > hp.tolerance:
        state = SmoState(alpha, y, gram, _bias(alpha, y, grad, C), history)
        raise SmoConvergenceError(
            f"SMO did not reach KKT tolerance {hp.tolerance} within its iteration budget",
            best=state,
        )

    history.append(dual_objective(alpha, y, gram))
    return SmoState(alpha, y, gram, _bias(alpha, y, grad, C), history)


def smo_train_binary(
    pos: np.ndarray,
    neg: np.ndarray,
    hp: SvmHyperparams = SvmHyperparams(),
    seed: int = 0,
    classes: tuple[int, int] = (0, 1),
) -> BinarySvm:
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg, dtype=np.float64))
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise ValueError("both classes need at least one sample")
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])

    def pack(state: SmoState) -> BinarySvm:
        sv = state.alpha > 0
        return BinarySvm(
            x[sv].copy(), (state.alpha * y)[sv], state.bias, classes[0], classes[1],
            hp.gamma, state.objective_history,
        )

    try:
        state = smo_solve(x, y, hp, seed)
    except SmoConvergenceError as exc:
        exc.best = pack(exc.best)
        raise
    return pack(state)


# ---------------------------------------------------------------------------
# multiclass model


@dataclass(eq=False)
class SvmModel:
    scaler: ScalerParams
    hyperparams: SvmHyperparams
    machines: dict[tuple[int, int], BinarySvm]
    n_classes: int

    def votes(self, x: np.ndarray) -> np.ndarray:
        """Vote counts of shape (n, n_classes) for raw (unscaled) features."""
        xs = self.scaler.transform(np.atleast_2d(x))
        votes = np.zeros((xs.shape[0], self.n_classes), dtype=np.int64)
        for (a, b), m in self.machines.items():
            f = m.decision(xs)
            votes[:, a] += f >= 0
            votes[:, b] += f < 0
        return votes

    def predict(self, x: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest tied class index
        return self.votes(x).argmax(axis=1)


def train_svm(
    features: np.ndarray,
    labels: np.ndarray,
    hp: SvmHyperparams = SvmHyperparams(),
    seed: int = 0,
    n_classes: int | None = None,
) -> SvmModel:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    scaler = fit_scaler(features)
    xs = scaler.transform(features)
    machines = {}
    for a, b in combinations(range(k), 2):
        pa, nb = xs[labels == a], xs[labels == b]
        if len(pa) == 0 or len(nb) == 0:
            raise ValueError(f"class pair ({a}, {b}) lacks training samples")
        machines[(a, b)] = smo_train_binary(pa, nb, hp, seed=seed + a * k + b, classes=(a, b))
    return SvmModel(scaler, hp, machines, k)


def predict(model: SvmModel, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Single-sample prediction: class index and per-class votes."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.scaler.minimum.shape[0]:
        raise ValueError("dimension mismatch")
    votes = model.votes(x)[0]
    return int(votes.argmax()), votes


# ---------------------------------------------------------------------------
# JSON model file


def model_to_dict(model: SvmModel) -> dict:
    hp = model.hyperparams
    return {
        "format": "texfuse-svm/1",
        "n_classes": model.n_classes,
        "hyperparams": {"C": hp.C, "gamma": hp.gamma, "tolerance": hp.tolerance,
                        "max_passes": hp.max_passes},
        "scaler": {"min": model.scaler.minimum.tolist(), "max": model.scaler.maximum.tolist()},
        "machines": [
            {
                "classes": [a, b],
                "support_vectors": m.support_vectors.tolist(),
                "dual_coef": m.dual_coef.tolist(),
                "bias": m.bias,
            }
            for (a, b), m in sorted(model.machines.items())
        ],
    }


def model_from_dict(doc: dict) -> SvmModel:
    hp = SvmHyperparams(**doc["hyperparams"])
    scaler = ScalerParams(np.array(doc["scaler"]["min"], dtype=np.float64),
                          np.array(doc["scaler"]["max"], dtype=np.float64))
    dim = scaler.minimum.shape[0]
    machines = {}
    for m in doc["machines"]:
        a, b = m["classes"]
        sv = np.array(m["support_vectors"], dtype=np.float64).reshape(-1, dim)
        machines[(a, b)] = BinarySvm(sv, np.array(m["dual_coef"], dtype=np.float64),
                                     float(m["bias"]), a, b, hp.gamma)
    return SvmModel(scaler, hp, machines, int(doc["n_classes"]))


def save_model(path, model: SvmModel, **extra):
    doc = model_to_dict(model)
    doc.update(extra)
    return write_json(path, doc)


def load_model(path) -> SvmModel:
    return model_from_dict(read_json(path))
