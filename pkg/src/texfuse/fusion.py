"""Confusion-matrix driven CNN/SVM fusion.

A binary map assigns each class to the classifier with the higher recall on
the fusion-map split. At test time the two predictions are reconciled:

* both agree -> that class;
* exactly one classifier predicted a class it owns -> follow it;
* both or neither do -> compare confidence scores

      score = AccuracyRate_self(c) + MisclassificationRate_other(c)

  where AccuracyRate(A) is the fraction of a classifier's "A" predictions
  that were right (its precision on A) and MisclassificationRate(A) is one
  minus that. A classifier that never predicted A has rates 0 and 1.

Every tie (map or score) goes to the SVM.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .artifacts import TexfuseError, read_json, write_json

CNN, SVM = "CNN", "SVM"
PROVENANCES = (CNN, SVM, "conflict-CNN", "conflict-SVM")
TIE_RULE = "prefer-SVM"


class FusionError(TexfuseError):
    code = "fusion"


def confusion_matrix(truth: Sequence[int], pred: Sequence[int], n_classes: int) -> np.ndarray:
    """Counts indexed ``[true, predicted]``."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValueError("truth and predictions must have the same length")
    return np.bincount(truth * n_classes + pred, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )


@dataclass(eq=False)
class ClassifierStats:
    confusion: np.ndarray
    accuracy_rate: np.ndarray  # per predicted class
    misclassification_rate: np.ndarray
    recall: np.ndarray  # per true class

    @classmethod
    def from_confusion(cls, cm: np.ndarray) -> "ClassifierStats":
        cm = np.asarray(cm, dtype=np.int64)
        diag = np.diag(cm).astype(np.float64)
        predicted = cm.sum(axis=0)
        actual = cm.sum(axis=1)
        acc = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
        rec = np.divide(diag, actual, out=np.zeros_like(diag), where=actual > 0)
        return cls(cm, acc, 1.0 - acc, rec)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy_rate": self.accuracy_rate.tolist(),
            "misclassification_rate": self.misclassification_rate.tolist(),
            "recall": self.recall.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassifierStats":
        return cls(
            np.array(doc["confusion"], dtype=np.int64),
            np.array(doc["accuracy_rate"], dtype=np.float64),
            np.array(doc["misclassification_rate"], dtype=np.float64),
            np.array(doc["recall"], dtype=np.float64),
        )


def _averaged_stats(truth, pred, k, resamples) -> ClassifierStats:
    full = ClassifierStats.from_confusion(confusion_matrix(truth, pred, k))
    if not resamples:
        return full
    acc, rec = np.zeros(k), np.zeros(k)
    for idx in resamples:
        s = ClassifierStats.from_confusion(confusion_matrix(truth[idx], pred[idx], k))
        acc += s.accuracy_rate
        rec += s.recall
    acc /= len(resamples)
    rec /= len(resamples)
    return ClassifierStats(full.confusion, acc, 1.0 - acc, rec)


def build_map(
    cnn_pred: Sequence[int],
    svm_pred: Sequence[int],
    truth: Sequence[int],
    n_classes: int | None = None,
    repetitions: int = 1,
    seed: int = 0,
) -> tuple[list[str], ClassifierStats, ClassifierStats]:
    """Per-class classifier assignment plus both classifiers' stats on the fusion-map split.

    With ``repetitions > 1`` the rates are averaged over that many stratified
    bootstrap resamples of the split instead of one pass over it.
    """
    cnn_pred = np.asarray(cnn_pred, dtype=np.int64)
    svm_pred = np.asarray(svm_pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if not (len(cnn_pred) == len(svm_pred) == len(truth)) or len(truth) == 0:
        raise FusionError("prediction and truth sequences must be aligned and non-empty")
    k = int(n_classes if n_classes is not None else max(truth.max(), cnn_pred.max(), svm_pred.max()) + 1)
    present = np.bincount(truth, minlength=k) > 0
    if not present.all():
        missing = [int(c) for c in np.flatnonzero(~present)]
        raise FusionError(f"class {missing[0]} is absent from the fusion-map split", code="missing-class")

    resamples = None
    if repetitions > 1:
        # stratified bootstrap so every class stays present in each resample
        rng = np.random.Generator(np.random.PCG64(seed))
        members = [np.flatnonzero(truth == c) for c in range(k)]
        resamples = [
            np.concatenate([rng.choice(m, size=m.size, replace=True) for m in members])
            for _ in range(repetitions)
        ]
    cnn_stats = _averaged_stats(truth, cnn_pred, k, resamples)
    svm_stats = _averaged_stats(truth, svm_pred, k, resamples)
    mapping = [CNN if cnn_stats.recall[c] > svm_stats.recall[c] else SVM for c in range(k)]
    return mapping, cnn_stats, svm_stats


def confidence_score(stats_self: ClassifierStats, stats_other: ClassifierStats, c: int) -> float:
    return float(stats_self.accuracy_rate[c] + stats_other.misclassification_rate[c])


@dataclass(eq=False)
class FusionModel:
    binary_map: list[str]
    cnn_stats: ClassifierStats
    svm_stats: ClassifierStats
    split_id: str = "fusion-map"
    repetitions: int = 1
    models: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.binary_map)

    def predict_one(self, c_cnn: int, c_svm: int) -> tuple[int, str]:
        c_cnn, c_svm = int(c_cnn), int(c_svm)
        if c_cnn == c_svm:
            return c_cnn, self.binary_map[c_cnn]
        cnn_claim = self.binary_map[c_cnn] == CNN
        svm_claim = self.binary_map[c_svm] == SVM
        if cnn_claim and not svm_claim:
            return c_cnn, CNN
        if svm_claim and not cnn_claim:
            return c_svm, SVM
        s_cnn = confidence_score(self.cnn_stats, self.svm_stats, c_cnn)
        s_svm = confidence_score(self.svm_stats, self.cnn_stats, c_svm)
        if s_cnn > s_svm:
            return c_cnn, "conflict-CNN"
        return c_svm, "conflict-SVM"

    def predict(self, cnn_pred, svm_pred) -> tuple[np.ndarray, list[str]]:
        out = [self.predict_one(a, b) for a, b in zip(cnn_pred, svm_pred, strict=True)]
        labels = np.array([o[0] for o in out], dtype=np.int64)
        return labels, [o[1] for o in out]

    def to_dict(self) -> dict:
        return {
            "format": "texfuse-fusion/1",
            "binary_map": list(self.binary_map),
            "tie_rule": TIE_RULE,
            "split": self.split_id,
            "repetitions": self.repetitions,
            "cnn": self.cnn_stats.to_dict(),
            "svm": self.svm_stats.to_dict(),
            "models": dict(self.models),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FusionModel":
        return cls(
            list(doc["binary_map"]),
            ClassifierStats.from_dict(doc["cnn"]),
            ClassifierStats.from_dict(doc["svm"]),
            doc.get("split", "fusion-map"),
            int(doc.get("repetitions", 1)),
            dict(doc.get("models", {})),
        )


def fit_fusion(cnn_pred, svm_pred, truth, n_classes=None, repetitions=1, seed=0,
               split_id="fusion-map") -> FusionModel:
    mapping, cs, ss = build_map(cnn_pred, svm_pred, truth, n_classes, repetitions, seed)
    return FusionModel(mapping, cs, ss, split_id, repetitions)


def fused_predict(fm: FusionModel, c_cnn: int, c_svm: int) -> tuple[int, str]:
    return fm.predict_one(c_cnn, c_svm)


def save_fusion(path, fm: FusionModel, **extra):
    doc = fm.to_dict()
    doc.update(extra)
    return write_json(path, doc)


def load_fusion(path) -> FusionModel:
    return FusionModel.from_dict(read_json(path))
