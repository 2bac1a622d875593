"""Recording I/O, mirror-limb imputation and orientation auditing.

A recording holds four wrist/ankle accelerometers sampled at 50 Hz. Samples
that are absent in the source file are kept as NaN so that windows downstream
can shrink around them instead of the whole row being dropped.
"""

from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import EmptyRecording, LabelNotInVocabulary, MissingColumn

SAMPLE_RATE_HZ = 50
ACC_RANGE_G = 8.0
AXES = ("x", "y", "z")
NULL_LABEL = "null"

# Activity names of the public WEAR release, index 0 is the background class.
WEAR_CLASSES = (
    NULL_LABEL,
    "jogging",
    "jogging (rotating arms)",
    "jogging (skipping)",
    "jogging (sidesteps)",
    "jogging (butt-kicks)",
    "stretching (triceps)",
    "stretching (lunging)",
    "stretching (shoulders)",
    "stretching (hamstrings)",
    "stretching (lumbar rotation)",
    "push-ups",
    "push-ups (complex)",
    "sit-ups",
    "sit-ups (complex)",
    "burpees",
    "lunges",
    "lunges (complex)",
    "bench-dips",
)


class LimbId(enum.Enum):
    LEFT_ARM = "left_arm"
    RIGHT_ARM = "right_arm"
    LEFT_LEG = "left_leg"
    RIGHT_LEG = "right_leg"

    @property
    def mirror(self) -> "LimbId":
        return _MIRROR[self]

    @property
    def level(self) -> str:
        return "upper" if self in (LimbId.LEFT_ARM, LimbId.RIGHT_ARM) else "lower"

    @property
    def index(self) -> int:
        return LIMBS.index(self)


LIMBS = tuple(LimbId)
_MIRROR = {
    LimbId.LEFT_ARM: LimbId.RIGHT_ARM,
    LimbId.RIGHT_ARM: LimbId.LEFT_ARM,
    LimbId.LEFT_LEG: LimbId.RIGHT_LEG,
    LimbId.RIGHT_LEG: LimbId.LEFT_LEG,
}


def channel_column(limb: LimbId, axis: str) -> str:
    return f"{limb.value}_acc_{axis}"


# Column order of the public release.
CSV_LIMB_ORDER = (LimbId.RIGHT_ARM, LimbId.LEFT_ARM, LimbId.RIGHT_LEG, LimbId.LEFT_LEG)
CHANNEL_COLUMNS = tuple(channel_column(limb, ax) for limb in CSV_LIMB_ORDER for ax in AXES)


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between activity names and class indices (``null`` is 0)."""

    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names or self.names[0] != NULL_LABEL:
            raise ValueError(f"vocabulary must start with {NULL_LABEL!r}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("vocabulary names must be distinct")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise LabelNotInVocabulary(name) from None

    def name(self, index: int) -> str:
        return self.names[index]

    @property
    def _lookup(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text().splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.names) + "\n")


WEAR_VOCABULARY = Vocabulary(WEAR_CLASSES)


@dataclass(frozen=True, eq=False)
class Recording:
    """One untrimmed session of one subject.

    ``acc`` has shape ``(n_samples, 4, 3)`` in g, limbs ordered as ``LIMBS``.
    A limb sample is missing when any of its three axes is NaN; all three
    axes are then stored as NaN.
    """

    subject_id: str
    acc: np.ndarray
    labels: np.ndarray | None = None
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        acc = np.array(self.acc, dtype=np.float64)
        if acc.ndim != 3 or acc.shape[1:] != (len(LIMBS), 3):
            raise ValueError(f"acc must have shape (n, 4, 3), got {acc.shape}")
        if acc.shape[0] == 0:
            raise EmptyRecording(f"recording {self.subject_id!r} has no samples")
        missing = np.isnan(acc).any(axis=2)
        acc[missing] = np.nan
        np.clip(acc, -ACC_RANGE_G, ACC_RANGE_G, out=acc)
        acc.setflags(write=False)
        object.__setattr__(self, "acc", acc)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int16)
            if labels.shape != (acc.shape[0],):
                raise ValueError("labels must have one entry per sample")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.acc.shape[0]

    @property
    def n_samples(self) -> int:
        return self.acc.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def missing_mask(self) -> np.ndarray:
        """Boolean ``(n_samples, 4)``, True where a limb sample is absent."""
        return np.isnan(self.acc[:, :, 0])

    def limb(self, limb: LimbId) -> np.ndarray:
        return self.acc[:, limb.index, :]

    def replace(self, **changes) -> "Recording":
        kw = dict(subject_id=self.subject_id, acc=self.acc, labels=self.labels,
                  sample_rate_hz=self.sample_rate_hz)
        kw.update(changes)
        return Recording(**kw)

    def equals(self, other: "Recording") -> bool:
        if self.subject_id != other.subject_id or self.sample_rate_hz != other.sample_rate_hz:
            return False
        if not np.array_equal(self.acc, other.acc, equal_nan=True):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


def _parse_floats(cells: np.ndarray) -> np.ndarray:
    # numpy's str->float conversion is correctly rounded; pd.to_numeric is not
    cells = np.char.strip(cells.astype(str))
    try:
        return np.where(cells == "", "nan", cells).astype(np.float64)
    except ValueError:
        out = np.empty(len(cells))
        for i, c in enumerate(cells):
            try:
                out[i] = float(c)
            except ValueError:
                out[i] = np.nan
        return out


def load_recording(path: str | Path, vocabulary: Vocabulary = WEAR_VOCABULARY) -> Recording:
    """Read one WEAR-layout CSV.

    Blank or unparseable acceleration cells become missing samples. Blank
    label cells are read as the ``null`` class.
    """
    path = Path(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    for col in CHANNEL_COLUMNS:
        if col not in df.columns:
            raise MissingColumn(col)
    if len(df) == 0:
        raise EmptyRecording(f"{path} has no rows")

    acc = np.empty((len(df), len(LIMBS), 3))
    for limb in LIMBS:
        for a, axis in enumerate(AXES):
            acc[:, limb.index, a] = _parse_floats(df[channel_column(limb, axis)].to_numpy())

    labels = None
    if "label" in df.columns:
        lookup = {}
        labels = np.empty(len(df), dtype=np.int16)
        for i, raw in enumerate(df["label"].to_numpy()):
            name = raw.strip() or NULL_LABEL
            if name not in lookup:
                lookup[name] = vocabulary.index(name)
            labels[i] = lookup[name]

    if "sbj_id" in df.columns and df["sbj_id"].iloc[0].strip():
        subject = df["sbj_id"].iloc[0].strip()
    else:
        subject = path.stem
    return Recording(subject_id=subject, acc=acc, labels=labels)


def save_recording(rec: Recording, path: str | Path, vocabulary: Vocabulary = WEAR_VOCABULARY) -> None:
    path = Path(path)
    header = ["sbj_id", *CHANNEL_COLUMNS]
    if rec.labels is not None:
        header.append("label")
    order = [(limb.index, a) for limb in CSV_LIMB_ORDER for a in range(3)]
    names = vocabulary.names
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(rec.n_samples):
            row = [rec.subject_id]
            for li, a in order:
                v = rec.acc[i, li, a]
                row.append("" if v != v else repr(float(v)))
            if rec.labels is not None:
                row.append(names[rec.labels[i]])
            writer.writerow(row)


class BothSidesMissing(UserWarning):
    """Timesteps where a limb and its mirror are both absent."""

    def __init__(self, limb: LimbId, indices: np.ndarray):
        super().__init__(f"{limb.value}: {len(indices)} samples missing on both sides")
        self.limb = limb
        self.indices = indices


def impute_mirror_limb(rec: Recording, limb: LimbId) -> Recording:
    """Fill missing samples of ``limb`` with the concurrent samples of its mirror."""
    mask = rec.missing_mask
    own, mirror = mask[:, limb.index], mask[:, limb.mirror.index]
    fill = own & ~mirror
    both = np.flatnonzero(own & mirror)
    if both.size:
        warnings.warn(BothSidesMissing(limb, both), stacklevel=2)
    if not fill.any():
        return rec
    acc = rec.acc.copy()
    acc[fill, limb.index, :] = acc[fill, limb.mirror.index, :]
    return rec.replace(acc=acc)


@dataclass(frozen=True)
class OrientationEntry:
    limb: LimbId
    half: int
    median_x: float
    flagged: bool


@dataclass
class OrientationReport:
    subject_id: str
    entries: list[OrientationEntry]
    rolling_median_trace: dict[LimbId, np.ndarray] = field(default_factory=dict)

    @property
    def flags(self) -> list[OrientationEntry]:
        return [e for e in self.entries if e.flagged]


def _halves(rec: Recording) -> tuple[slice, slice]:
    mid = rec.n_samples // 2
    return slice(0, mid), slice(mid, rec.n_samples)


def rolling_median_trace(x: np.ndarray, rate_hz: int = SAMPLE_RATE_HZ, window_s: float = 120.0) -> np.ndarray:
    """Centered rolling median of ``x`` sampled once per second."""
    win = int(round(window_s * rate_hz))
    smoothed = pd.Series(x).rolling(win, center=True, min_periods=1).median().to_numpy()
    return smoothed[::rate_hz]


def audit_orientation(cohort: Sequence[Recording], with_trace: bool = False) -> list[OrientationReport]:
    """Per-limb, per-half x-axis medians flagged against the cohort's modal sign.

    Each recording is split at its midpoint. A half is flagged when its median
    has the opposite sign to the majority of all half-medians of that limb
    (ties resolve to +1). Empty halves report a median of 0 and are never
    flagged.
    """
    medians = np.zeros((len(cohort), len(LIMBS), 2))
    for r, rec in enumerate(cohort):
        for h, sl in enumerate(_halves(rec)):
            x = rec.acc[sl, :, 0]
            for limb in LIMBS:
                col = x[:, limb.index]
                col = col[~np.isnan(col)]
                medians[r, limb.index, h] = float(np.median(col)) if col.size else 0.0

    signs = np.sign(medians)
    modal = np.where((signs < 0).sum(axis=(0, 2)) > (signs > 0).sum(axis=(0, 2)), -1.0, 1.0)

    reports = []
    for r, rec in enumerate(cohort):
        entries = []
        for limb in LIMBS:
            for h in range(2):
                m = medians[r, limb.index, h]
                entries.append(OrientationEntry(limb, h + 1, m, bool(np.sign(m) == -modal[limb.index])))
        traces = {}
        if with_trace:
            for limb in LIMBS:
                traces[limb] = rolling_median_trace(rec.acc[:, limb.index, 0], rec.sample_rate_hz)
        reports.append(OrientationReport(rec.subject_id, entries, traces))
    return reports


def write_orientation_csv(reports: Iterable[OrientationReport], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "limb", "half", "median_x", "flagged"])
        for rep in reports:
            for e in rep.entries:
                writer.writerow([rep.subject_id, e.limb.value, e.half, repr(e.median_x), int(e.flagged)])
