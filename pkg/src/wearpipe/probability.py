"""Per-timestep class probability tables."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(eq=False)
class ProbabilityMatrix:
    """One row of class probabilities per (recording, timestep[, variant]).

    Rows are normally normalized; after summing folds they hold fold-count
    totals until renormalized.
    """

    values: np.ndarray
    recording_ids: np.ndarray
    timesteps: np.ndarray
    variants: np.ndarray | None = None
    stride_s: float = 0.5

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.values.shape[0]
        self.recording_ids = np.asarray(self.recording_ids, dtype=object)
        self.timesteps = np.asarray(self.timesteps, dtype=np.int64)
        if self.variants is None:
            self.variants = np.full(n, "none", dtype=object)
        self.variants = np.asarray(self.variants, dtype=object)
        if not (len(self.recording_ids) == len(self.timesteps) == len(self.variants) == n):
            raise ValueError("row identifiers do not match values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]

    def take(self, rows) -> "ProbabilityMatrix":
        rows = np.asarray(rows)
        return ProbabilityMatrix(self.values[rows], self.recording_ids[rows], self.timesteps[rows],
                                 self.variants[rows], self.stride_s)

    def with_values(self, values: np.ndarray) -> "ProbabilityMatrix":
        return ProbabilityMatrix(values, self.recording_ids, self.timesteps, self.variants, self.stride_s)

    def normalized(self) -> "ProbabilityMatrix":
        return self.with_values(self.values / self.values.sum(axis=1, keepdims=True))

    def argmax(self) -> np.ndarray:
        return self.values.argmax(axis=1)

    def recordings(self) -> list[str]:
        return list(dict.fromkeys(self.recording_ids.tolist()))

    def for_recording(self, recording_id: str) -> "ProbabilityMatrix":
        rows = np.flatnonzero(self.recording_ids == recording_id)
        return self.take(rows[np.argsort(self.timesteps[rows], kind="stable")])

    @staticmethod
    def concat(parts) -> "ProbabilityMatrix":
        return ProbabilityMatrix(
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.recording_ids for p in parts]),
            np.concatenate([p.timesteps for p in parts]),
            np.concatenate([p.variants for p in parts]),
            parts[0].stride_s,
        )

    def save(self, path: str | Path) -> None:
        with Path(path).open("wb") as fh:
            np.savez(fh, values=self.values, recording_ids=self.recording_ids.astype(str),
                     timesteps=self.timesteps, variants=self.variants.astype(str),
                     stride_s=np.array(self.stride_s))

    @classmethod
    def load(cls, path: str | Path) -> "ProbabilityMatrix":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["values"], z["recording_ids"].astype(object), z["timesteps"],
                       z["variants"].astype(object), float(z["stride_s"]))
