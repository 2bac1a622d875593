"""Prediction refinements: fold voting, temporal smoothing, presence boosting
and expansion of 0.5 s predictions to per-sample labels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import EmptyPredictions, InvalidConfig, MisalignedFolds
from .ingest import SAMPLE_RATE_HZ, Vocabulary
from .probability import ProbabilityMatrix


@dataclass(frozen=True)
class SmoothingConfig:
    half_width_steps: int = 10
    sigma: float = 6.0

    def __post_init__(self):
        if self.half_width_steps < 0:
            raise InvalidConfig("half_width_steps must be >= 0")
        if not self.sigma > 0:
            raise InvalidConfig("sigma must be > 0")

    def kernel(self) -> np.ndarray:
        """Unit-sum Gaussian weights for offsets -half_width..half_width."""
        k = np.arange(-self.half_width_steps, self.half_width_steps + 1, dtype=np.float64)
        w = np.exp(-(k**2) / (2.0 * self.sigma**2))
        return w / w.sum()


@dataclass(frozen=True)
class RuleBoostConfig:
    min_presence_s: float = 50.0
    candidate_prob_floor: float = 0.2
    min_region_s: float = 30.0

    def __post_init__(self):
        if self.min_region_s > self.min_presence_s:
            raise InvalidConfig("min_region_s must not exceed min_presence_s")
        if not 0.0 <= self.candidate_prob_floor <= 1.0:
            raise InvalidConfig("candidate_prob_floor must lie in [0, 1]")


def _check_aligned(per_fold: list[ProbabilityMatrix]) -> None:
    if not per_fold:
        raise MisalignedFolds("no fold predictions given")
    ref = per_fold[0]
    for p in per_fold[1:]:
        if (p.values.shape != ref.values.shape
                or not np.array_equal(p.recording_ids, ref.recording_ids)
                or not np.array_equal(p.timesteps, ref.timesteps)
                or not np.array_equal(p.variants, ref.variants)):
            raise MisalignedFolds("fold predictions cover different rows or classes")


def fold_sum(per_fold: list[ProbabilityMatrix]) -> ProbabilityMatrix:
    """Element-wise sum of aligned fold predictions.

    Values are sorted across folds before summing so the result does not
    depend on fold order, not even in the last bit.
    """
    _check_aligned(per_fold)
    stacked = np.sort(np.stack([p.values for p in per_fold]), axis=0)
    return per_fold[0].with_values(stacked.sum(axis=0))


def kfold_vote(per_fold: list[ProbabilityMatrix]) -> ProbabilityMatrix:
    return fold_sum(per_fold).normalized()


def smooth_sequence(P: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    """Convolve each class column of a (timesteps, classes) array.

    The kernel is truncated at the ends and renormalized over what remains.
    """
    n = P.shape[0]
    w = cfg.kernel()
    hw = cfg.half_width_steps
    acc = np.zeros_like(P, dtype=np.float64)
    norm = np.zeros(n)
    for k in range(-hw, hw + 1):
        lo, hi = max(0, -k), min(n, n - k)
        if lo >= hi:
            continue
        acc[lo:hi] += w[k + hw] * P[lo + k:hi + k]
        norm[lo:hi] += w[k + hw]
    return acc / norm[:, None]


def smooth(probs: ProbabilityMatrix, cfg: SmoothingConfig | None = None) -> ProbabilityMatrix:
    """Smooth every recording's probability sequence independently.

    Rows come back grouped by recording in first-appearance order, each
    sorted by timestep.
    """
    cfg = cfg or SmoothingConfig()
    parts = []
    for rid in probs.recordings():
        seq = probs.for_recording(rid)
        parts.append(seq.with_values(smooth_sequence(seq.values, cfg)))
    return ProbabilityMatrix.concat(parts)


def _runs(mask: np.ndarray):
    """(start, stop) of every maximal True run."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return edges[0::2], edges[1::2]


def rule_boost(probs_summed: np.ndarray, labels: np.ndarray, cfg: RuleBoostConfig | None = None,
               stride_s: float = 0.5, null_index: int = 0) -> np.ndarray:
    """Relabel a null stretch to a class that is otherwise (almost) absent.

    ``probs_summed`` holds one recording's (timesteps, classes) fold sums or
    probabilities; rows are normalized here. Classes are scanned in
    ascending index order and each relabel is visible to later classes.
    """
    cfg = cfg or RuleBoostConfig()
    P = np.asarray(probs_summed, dtype=np.float64)
    P = P / P.sum(axis=1, keepdims=True)
    out = np.array(labels, dtype=np.int64, copy=True)
    min_steps = cfg.min_region_s / stride_s
    for c in range(P.shape[1]):
        if c == null_index:
            continue
        if np.count_nonzero(out == c) * stride_s >= cfg.min_presence_s:
            continue
        starts, stops = _runs((P[:, c] >= cfg.candidate_prob_floor) & (out == null_index))
        if len(starts) == 0:
            continue
        best = int(np.argmax(stops - starts))  # first longest run
        if stops[best] - starts[best] >= min_steps:
            out[starts[best]:stops[best]] = c
    return out


def expand_to_samples(labels, n_samples: int, rate: float = SAMPLE_RATE_HZ,
                      stride_s: float = 0.5) -> np.ndarray:
    """Per-sample labels from per-timestep labels by nearest timestep.

    Sample ``i`` sits at ``i / rate`` seconds and timestep ``j`` at
    ``j * stride_s``; exact ties go to the earlier timestep.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyPredictions("no predictions to expand")
    # samples per step as an exact fraction p/q, so j = ceil(i*q/p - 1/2)
    ratio = Fraction(rate).limit_denominator(10**6) * Fraction(stride_s).limit_denominator(10**6)
    p, q = ratio.numerator, ratio.denominator
    i = np.arange(n_samples, dtype=np.int64)
    j = (2 * i * q + p - 1) // (2 * p)
    return labels[np.minimum(j, labels.size - 1)]


def write_sample_labels(path: str | Path, labels, vocabulary: Vocabulary) -> None:
    """Write ``sample_index,label_name`` rows for one recording."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "label_name"])
        for i, lab in enumerate(labels):
            w.writerow([i, vocabulary.name(int(lab))])


def read_sample_labels(path: str | Path, vocabulary: Vocabulary) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([vocabulary.index(r["label_name"]) for r in rows], dtype=np.int64)
