"""Subject-grouped fold assignment and sample-wise macro F1 scoring."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatch, TooFewSubjects


@dataclass(frozen=True)
class FoldAssignment:
    fold_count: int
    subject_fold: dict[str, int]

    def subjects_in(self, fold: int) -> list[str]:
        return [s for s, f in self.subject_fold.items() if f == fold]

    def fold_of(self, subject: str) -> int:
        return self.subject_fold[subject]

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(self.subjects_in(f)) for f in range(self.fold_count))


def grouped_kfold(subjects, k: int = 3, seed: int = 0) -> FoldAssignment:
    """Shuffle distinct subjects by seed and deal them round-robin into k folds."""
    unique = sorted(set(subjects))
    if len(unique) < k:
        raise TooFewSubjects(f"need at least {k} subjects, got {len(unique)}")
    order = np.random.default_rng(seed).permutation(len(unique))
    return FoldAssignment(k, {unique[i]: pos % k for pos, i in enumerate(order)})


@dataclass
class EvalReport:
    macro_f1: float
    per_class_f1: np.ndarray  # NaN for classes excluded from the mean
    confusion: np.ndarray  # rows = truth, columns = prediction
    per_subject_macro_f1: dict[str, float] = field(default_factory=dict)
    class_names: list[str] | None = None

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def names(self) -> list[str]:
        return self.class_names or [str(i) for i in range(len(self.per_class_f1))]

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "n_samples": self.n_samples,
            "per_class_f1": {n: (None if np.isnan(v) else float(v))
                             for n, v in zip(self.names(), self.per_class_f1)},
            "per_subject_macro_f1": dict(sorted(self.per_subject_macro_f1.items())),
            "confusion": self.confusion.tolist(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def save_confusion_csv(self, path: str | Path) -> None:
        names = self.names()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["truth\\pred", *names])
            for name, row in zip(names, self.confusion):
                w.writerow([name, *row.tolist()])

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        names = list(d["per_class_f1"])
        f1 = np.array([np.nan if v is None else v for v in d["per_class_f1"].values()])
        return cls(d["macro_f1"], f1, np.array(d["confusion"], dtype=np.int64),
                   d["per_subject_macro_f1"], names)


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    return np.bincount(truth * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _f1_from_confusion(C: np.ndarray) -> tuple[float, np.ndarray]:
    tp = np.diag(C).astype(np.float64)
    fp = C.sum(axis=0) - tp
    fn = C.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2 * tp / denom, np.nan)
    included = ~np.isnan(f1)
    return (float(f1[included].mean()) if included.any() else 0.0), f1


def macro_f1(truth, pred, n_classes: int | None = None, subject_ids=None,
             class_names: list[str] | None = None) -> EvalReport:
    """Sample-wise macro F1 with the confusion matrix and optional per-subject scores.

    Classes that never occur in either sequence are left out of the mean.
    """
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise LengthMismatch(f"truth has {truth.size} samples, prediction {pred.size}")
    if n_classes is None:
        n_classes = len(class_names) if class_names else int(max(truth.max(initial=0), pred.max(initial=0))) + 1
    C = confusion_matrix(truth, pred, n_classes)
    score, f1 = _f1_from_confusion(C)

    per_subject = {}
    if subject_ids is not None:
        subject_ids = np.asarray(subject_ids)
        if subject_ids.shape != truth.shape:
            raise LengthMismatch("subject ids do not match the label sequence")
        for s in dict.fromkeys(subject_ids.tolist()):
            rows = subject_ids == s
            per_subject[str(s)] = _f1_from_confusion(confusion_matrix(truth[rows], pred[rows], n_classes))[0]
    return EvalReport(score, f1, C, per_subject, class_names)
