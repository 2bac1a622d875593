"""Strided multi-resolution feature extraction.

For every prediction timestep (one every 0.5 s) the engine evaluates a fixed
set of 14 features on past and future windows of 1, 2, 4, 8, 16 and 32
seconds. Windows are clipped at the recording edges and missing samples are
dropped before a feature is computed, so each window row may have its own
effective length. All kernels work on a 2-D batch where valid samples are
packed to the left and the tail is NaN.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view

from .ingest import AXES, LIMBS, Recording

TIME_FEATURES = (
    "min",
    "max",
    "ptp",
    "iqr",
    "std",
    "skew",
    "kurtosis",
    "hjorth_mobility",
    "hjorth_complexity",
    "mean_crossing_rate",
    "differential_entropy",
    "petrosian_fd",
    "katz_fd",
)
SPECTRAL_FEATURE = "spectral_entropy"
FEATURES = TIME_FEATURES + (SPECTRAL_FEATURE,)
DIRECTIONS = ("past", "future")

MOMENT_EPS = 1e-12
VARIANCE_FLOOR = 1e-12
POWER_EPS = 1e-24
SPECTRAL_MIN_SAMPLES = 4
SPECTRAL_MIN_WINDOW_S = 2.0


@dataclass(frozen=True)
class WindowPlan:
    sizes_s: tuple[float, ...] = (1, 2, 4, 8, 16, 32)
    directions: tuple[str, ...] = DIRECTIONS
    stride_s: float = 0.5
    min_samples: int = 2

    def features_for(self, size_s: float) -> tuple[str, ...]:
        return FEATURES if size_s >= SPECTRAL_MIN_WINDOW_S else TIME_FEATURES

    @property
    def columns_per_channel(self) -> int:
        return len(self.directions) * sum(len(self.features_for(w)) for w in self.sizes_s)


class FeatureColumnKey(NamedTuple):
    channel: str
    direction: str
    window_s: float
    feature: str

    def __str__(self) -> str:
        return f"{self.channel}|{self.direction}|{self.window_s:g}|{self.feature}"

    @classmethod
    def parse(cls, text: str) -> "FeatureColumnKey":
        channel, direction, window, feature = text.split("|")
        return cls(channel, direction, float(window), feature)


def raw_channels() -> list[str]:
    return [f"{limb.value}.{ax}" for limb in LIMBS for ax in AXES]


def smv_channels() -> list[str]:
    return [f"{limb.value}.smv" for limb in LIMBS]


def channel_columns(channel: str, plan: WindowPlan) -> list[str]:
    return [
        str(FeatureColumnKey(channel, d, w, f))
        for d in plan.directions
        for w in plan.sizes_s
        for f in plan.features_for(w)
    ]


def schema_hash(columns: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(columns).encode()).hexdigest()


@dataclass(eq=False)
class FeatureMatrix:
    """Rows are (recording, timestep, variant); columns are feature keys.

    Missing feature values are NaN. ``labels`` holds one class index per row
    when the source recordings were labeled.
    """

    values: np.ndarray
    columns: tuple[str, ...]
    recording_ids: np.ndarray
    timesteps: np.ndarray
    variants: np.ndarray | None = None
    labels: np.ndarray | None = None
    config: str = "raw"
    plan: WindowPlan = field(default_factory=WindowPlan)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        n = self.values.shape[0]
        self.recording_ids = np.asarray(self.recording_ids, dtype=object)
        self.timesteps = np.asarray(self.timesteps, dtype=np.int64)
        if self.variants is None:
            self.variants = np.full(n, "none", dtype=object)
        self.variants = np.asarray(self.variants, dtype=object)
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column count does not match values")
        if not (len(self.recording_ids) == len(self.timesteps) == len(self.variants) == n):
            raise ValueError("row identifiers do not match values")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels do not match values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.columns)

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(
            self.values[rows],
            self.columns,
            self.recording_ids[rows],
            self.timesteps[rows],
            self.variants[rows],
            None if self.labels is None else self.labels[rows],
            self.config,
            self.plan,
        )

    def with_values(self, values: np.ndarray, columns: Sequence[str], config: str) -> "FeatureMatrix":
        return FeatureMatrix(values, tuple(columns), self.recording_ids, self.timesteps,
                             self.variants, self.labels, config, self.plan)

    @staticmethod
    def concat(parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        first = parts[0]
        for p in parts[1:]:
            if p.columns != first.columns:
                raise ValueError("cannot concatenate matrices with different schemas")
        labels = None
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        return FeatureMatrix(
            np.concatenate([p.values for p in parts]),
            first.columns,
            np.concatenate([p.recording_ids for p in parts]),
            np.concatenate([p.timesteps for p in parts]),
            np.concatenate([p.variants for p in parts]),
            labels,
            first.config,
            first.plan,
        )

    def save(self, path: str | Path) -> Path:
        """Write ``<path>`` (npz table) and ``<path>.schema`` (one key per line)."""
        path = Path(path)
        arrays = dict(
            values=self.values,
            recording_ids=self.recording_ids.astype(str),
            timesteps=self.timesteps,
            variants=self.variants.astype(str),
            config=np.array(self.config),
            schema_hash=np.array(self.schema_hash),
        )
        if self.labels is not None:
            arrays["labels"] = self.labels
        with path.open("wb") as fh:
            np.savez(fh, **arrays)
        schema_path(path).write_text("\n".join(self.columns) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        path = Path(path)
        columns = tuple(schema_path(path).read_text().splitlines())
        with np.load(path, allow_pickle=False) as z:
            if str(z["schema_hash"]) != schema_hash(columns):
                raise ValueError(f"{path}: schema file does not match table")
            return cls(
                z["values"],
                columns,
                z["recording_ids"].astype(object),
                z["timesteps"],
                z["variants"].astype(object),
                z["labels"] if "labels" in z else None,
                str(z["config"]),
            )


def schema_path(path: Path) -> Path:
    return path.with_name(path.name + ".schema")


# --------------------------------------------------------------------------
# batch kernels
# --------------------------------------------------------------------------


def pack_left(X: np.ndarray) -> np.ndarray:
    """Move valid samples of each row to the front, keeping their order."""
    X = np.array(X, dtype=np.float64, copy=True)
    nan = np.isnan(X)
    rows = np.flatnonzero(nan.any(axis=1))
    if rows.size:
        order = np.argsort(nan[rows], axis=1, kind="stable")
        X[rows] = np.take_along_axis(X[rows], order, axis=1)
    return X


@njit(cache=True)
def _variance(x, n):
    if n <= 0:
        return 0.0
    mean = 0.0
    for i in range(n):
        mean += x[i]
    mean /= n
    acc = 0.0
    for i in range(n):
        d = x[i] - mean
        acc += d * d
    return acc / n


@njit(cache=True)
def _lerp(a, b, t):
    if t >= 0.5:
        return b - (b - a) * (1.0 - t)
    return a + (b - a) * t


@njit(cache=True)
def _quantile_sorted(s, n, q):
    pos = q * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    return _lerp(s[lo], s[hi], pos - lo)


@njit(cache=True)
def _time_kernel(X, S, out):
    rows, width = X.shape
    x = np.empty(width)
    d = np.empty(max(width - 1, 1))
    dd = np.empty(max(width - 2, 1))
    for r in range(rows):
        n = 0
        for j in range(width):
            v = X[r, j]
            if v == v:
                x[n] = v
                n += 1
        if n < 2:
            for k in range(out.shape[1]):
                out[r, k] = np.nan
            continue

        mean = 0.0
        for i in range(n):
            mean += x[i]
        mean /= n
        m2 = 0.0
        m3 = 0.0
        m4 = 0.0
        for i in range(n):
            dev = x[i] - mean
            dev2 = dev * dev
            m2 += dev2
            m3 += dev2 * dev
            m4 += dev2 * dev2
        m2 /= n
        m3 /= n
        m4 /= n
        if m2 < MOMENT_EPS:
            skew = 0.0
            kurt = 0.0
        else:
            skew = m3 / m2**1.5
            kurt = m4 / (m2 * m2) - 3.0

        s = S[r]
        iqr = _quantile_sorted(s, n, 0.75) - _quantile_sorted(s, n, 0.25)

        for i in range(n - 1):
            d[i] = x[i + 1] - x[i]
        for i in range(n - 2):
            dd[i] = d[i + 1] - d[i]
        var_d = _variance(d, n - 1)
        var_dd = _variance(dd, n - 2)
        mobility = np.sqrt(var_d / m2) if m2 > 0 else 0.0
        mobility_d = np.sqrt(var_dd / var_d) if var_d > 0 else 0.0
        complexity = mobility_d / mobility if mobility > 0 else 0.0

        crossings = 0
        prev = x[0] >= mean
        for i in range(1, n):
            cur = x[i] >= mean
            if cur != prev:
                crossings += 1
            prev = cur

        n_delta = 0
        for i in range(n - 2):
            if np.signbit(d[i]) != np.signbit(d[i + 1]):
                n_delta += 1
        log_n = np.log10(n)
        petrosian = log_n / (log_n + np.log10(n / (n + 0.4 * n_delta)))

        length = 0.0
        spread = 0.0
        for i in range(n - 1):
            length += abs(d[i])
        for i in range(1, n):
            spread = max(spread, abs(x[i] - x[0]))
        if n - 1 <= 1 or spread == 0 or length == 0:
            katz = 1.0
        else:
            log_n1 = np.log10(n - 1)
            katz = log_n1 / (log_n1 + np.log10(spread / length))

        out[r, 0] = s[0]
        out[r, 1] = s[n - 1]
        out[r, 2] = s[n - 1] - s[0]
        out[r, 3] = iqr
        out[r, 4] = np.sqrt(m2)
        out[r, 5] = skew
        out[r, 6] = kurt
        out[r, 7] = mobility
        out[r, 8] = complexity
        out[r, 9] = crossings
        out[r, 10] = 0.5 * np.log(2 * np.pi * np.e * max(m2, VARIANCE_FLOOR))
        out[r, 11] = petrosian
        out[r, 12] = katz


def time_domain_batch(X: np.ndarray) -> np.ndarray:
    """Time-domain features of each row of ``X``; shape ``(rows, 13)``.

    NaN samples are dropped first. Rows left with fewer than two samples
    are all NaN.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = np.empty((X.shape[0], len(TIME_FEATURES)))
    # numpy's vectorised sort is far faster than numba's; NaNs sort last
    _time_kernel(X, np.sort(X, axis=1), out)
    return out


@njit(cache=True)
def _periodogram_entropy(F, length, sample_rate_hz, out):
    # F holds the rfft of mean-removed rows; DC is skipped, the Nyquist bin
    # of even lengths is not doubled
    rows, n_freq = F.shape
    bins = n_freq - 1
    norm = np.log2(bins)
    P = np.empty(bins)
    for r in range(rows):
        total = 0.0
        for k in range(bins):
            c = F[r, k + 1]
            p = (c.real * c.real + c.imag * c.imag) / (sample_rate_hz * length)
            if not (length % 2 == 0 and k == bins - 1):
                p *= 2.0
            P[k] = p
            total += p
        if total < POWER_EPS:
            out[r] = 0.0
            continue
        h = 0.0
        for k in range(bins):
            q = P[k] / total
            if q > 0:
                h -= q * np.log2(q)
        out[r] = h / norm


def spectral_entropy_batch(X: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    """Normalized periodogram entropy of left-packed windows; shape ``(rows,)``.

    Rows with fewer than four valid samples are NaN.
    """
    out = np.full(X.shape[0], np.nan)
    n = X.shape[1] - np.isnan(X).sum(axis=1)
    full = n == X.shape[1]
    groups = [(X.shape[1], np.flatnonzero(full))] if full.any() else []
    groups += [(length, np.flatnonzero(n == length)) for length in np.unique(n[~full])]
    for length, rows in groups:
        if length < SPECTRAL_MIN_SAMPLES:
            continue
        Y = X[rows, :length]
        Y = Y - Y.mean(axis=1, keepdims=True)
        se = np.empty(len(rows))
        _periodogram_entropy(np.fft.rfft(Y, axis=1), length, float(sample_rate_hz), se)
        out[rows] = se
    return out


def time_domain_features(window: Sequence[float]) -> dict[str, float]:
    """All 13 time-domain features of one window; NaN samples are dropped."""
    x = pack_left(np.asarray(window, dtype=np.float64)[None, :])
    return dict(zip(TIME_FEATURES, time_domain_batch(x)[0].tolist()))


def spectral_entropy(window: Sequence[float], sample_rate_hz: float = 50.0) -> float:
    x = pack_left(np.asarray(window, dtype=np.float64)[None, :])
    return float(spectral_entropy_batch(x, sample_rate_hz)[0])


# --------------------------------------------------------------------------
# extraction engine
# --------------------------------------------------------------------------


def compute_smv(rec: Recording) -> np.ndarray:
    """Per-limb signal magnitude, shape ``(n_samples, 4)``; NaN where missing."""
    return np.sqrt((rec.acc**2).sum(axis=2))


def prediction_steps(n_samples: int, sample_rate_hz: int, stride_s: float) -> np.ndarray:
    """Sample index of every prediction timestep, both recording ends included."""
    stride = stride_s * sample_rate_hz
    if abs(stride - round(stride)) > 1e-9:
        raise ValueError("stride must be a whole number of samples")
    stride = int(round(stride))
    return np.arange(n_samples // stride + 1) * stride


def channel_features(signal: np.ndarray, steps: np.ndarray, plan: WindowPlan,
                     sample_rate_hz: int) -> np.ndarray:
    """Feature block ``(len(steps), columns_per_channel)`` for one channel."""
    widths = [int(round(w * sample_rate_hz)) for w in plan.sizes_s]
    pad = max(widths)
    padded = np.concatenate([np.full(pad, np.nan), signal, np.full(pad, np.nan)])
    blocks = []
    for direction in plan.directions:
        for size_s, w in zip(plan.sizes_s, widths):
            view = sliding_window_view(padded, w)
            start = steps + pad - w if direction == "past" else steps + pad
            X = view[start]
            if any(np.isnan(X[:, 0])) or np.isnan(signal).any():
                X = pack_left(X)
            if plan.min_samples > 2:
                X[(~np.isnan(X)).sum(axis=1) < plan.min_samples] = np.nan
            blocks.append(time_domain_batch(X))
            if SPECTRAL_FEATURE in plan.features_for(size_s):
                blocks.append(spectral_entropy_batch(X, sample_rate_hz)[:, None])
    return np.concatenate(blocks, axis=1)


def extract(rec: Recording, plan: WindowPlan | None = None, channel_config: str = "raw",
            threads: int = 1, recording_id: str | None = None) -> FeatureMatrix:
    """Feature matrix with one row per 0.5 s timestep of ``rec``.

    ``channel_config`` is ``"raw"`` (12 axis channels) or ``"smv"`` (4
    magnitude channels).
    """
    plan = plan or WindowPlan()
    if channel_config == "raw":
        names = raw_channels()
        signals = rec.acc.reshape(rec.n_samples, -1)
    elif channel_config == "smv":
        names = smv_channels()
        signals = compute_smv(rec)
    else:
        raise ValueError(f"unknown channel config {channel_config!r}")

    steps = prediction_steps(rec.n_samples, rec.sample_rate_hz, plan.stride_s)

    def run(c):
        return channel_features(signals[:, c], steps, plan, rec.sample_rate_hz)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, range(len(names))))
    else:
        blocks = [run(c) for c in range(len(names))]

    columns = [col for name in names for col in channel_columns(name, plan)]
    labels = None
    if rec.labels is not None:
        labels = rec.labels[np.minimum(steps, rec.n_samples - 1)].astype(np.int64)
    rid = recording_id or rec.subject_id
    return FeatureMatrix(
        np.concatenate(blocks, axis=1),
        columns,
        np.full(len(steps), rid, dtype=object),
        np.arange(len(steps)),
        labels=labels,
        config=channel_config,
        plan=plan,
    )
