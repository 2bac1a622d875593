"""Feature-space augmentations for four-limb setups.

All transforms act on an already extracted raw feature matrix whose columns
are grouped in one block per (limb, axis) channel, limbs in ``LIMBS`` order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InconsistentVariants, NotRawConfig
from .features import FeatureMatrix, channel_columns, raw_channels
from .ingest import AXES, LIMBS, LimbId
from .probability import ProbabilityMatrix

ARMS = (LimbId.LEFT_ARM, LimbId.RIGHT_ARM)
LEGS = (LimbId.LEFT_LEG, LimbId.RIGHT_LEG)
MODES = ("raw", "smv", "stat2", "stat3", "sort", "lr_swap", "ul_pair")


class AggregationKind(enum.Enum):
    STAT2 = ("mean", "std")
    STAT3 = ("mean", "std", "skew")
    SORT = ("min", "mid", "max")

    @property
    def statistics(self) -> tuple[str, ...]:
        return self.value

    @classmethod
    def from_name(cls, name: str) -> "AggregationKind":
        return cls[name.upper()]


@dataclass(frozen=True)
class VariantTag:
    kind: str = "none"
    upper_swapped: bool = False
    lower_swapped: bool = False
    arm: LimbId | None = None
    leg: LimbId | None = None

    def __str__(self) -> str:
        if self.kind == "lr_swap":
            return f"lr_swap:{int(self.upper_swapped)}:{int(self.lower_swapped)}"
        if self.kind == "ul_pair":
            return f"ul_pair:{self.arm.value}:{self.leg.value}"
        return "none"

    @classmethod
    def parse(cls, text: str) -> "VariantTag":
        parts = text.split(":")
        if parts[0] == "lr_swap":
            return cls("lr_swap", parts[1] == "1", parts[2] == "1")
        if parts[0] == "ul_pair":
            return cls("ul_pair", arm=LimbId(parts[1]), leg=LimbId(parts[2]))
        if text == "none":
            return cls()
        raise ValueError(f"unknown variant tag {text!r}")


LR_VARIANTS = tuple(VariantTag("lr_swap", u, l) for l in (False, True) for u in (False, True))
UL_VARIANTS = tuple(VariantTag("ul_pair", arm=a, leg=g) for a in ARMS for g in LEGS)


def _raw_blocks(m: FeatureMatrix) -> np.ndarray:
    """Values reshaped to ``(rows, limb, axis, block)``."""
    expected = [c for ch in raw_channels() for c in channel_columns(ch, m.plan)]
    if m.config != "raw" or list(m.columns) != expected:
        raise NotRawConfig(f"expected raw per-axis columns, got config {m.config!r}")
    return m.values.reshape(m.n_rows, len(LIMBS), len(AXES), -1)


def _block_suffixes(m: FeatureMatrix) -> list[str]:
    return [c.split("|", 1)[1] for c in channel_columns("_", m.plan)]


def rotation_invariant_aggregate(m: FeatureMatrix, kind: AggregationKind | str) -> FeatureMatrix:
    """Collapse the x/y/z values of every (limb, window, feature) group.

    A group with any missing axis yields missing outputs.
    """
    if isinstance(kind, str):
        kind = AggregationKind.from_name(kind)
    V = _raw_blocks(m)
    bad = np.isnan(V).any(axis=2)

    stats = []
    if kind is AggregationKind.SORT:
        S = np.sort(V, axis=2)
        stats = [S[:, :, 0], S[:, :, 1], S[:, :, 2]]
    else:
        mean = V.mean(axis=2)
        dev = V - mean[:, :, None, :]
        m2 = (dev**2).mean(axis=2)
        stats = [mean, np.sqrt(m2)]
        if kind is AggregationKind.STAT3:
            m3 = (dev**3).mean(axis=2)
            with np.errstate(invalid="ignore", divide="ignore"):
                stats.append(np.where(m2 < 1e-12, 0.0, m3 / m2**1.5))
    out = np.stack(stats, axis=2)  # rows, limb, stat, block
    out[np.broadcast_to(bad[:, :, None, :], out.shape)] = np.nan

    suffixes = _block_suffixes(m)
    columns = [f"{limb.value}.{stat}|{s}" for limb in LIMBS for stat in kind.statistics for s in suffixes]
    return m.with_values(out.reshape(m.n_rows, -1), columns, kind.name.lower())


def _expand(m: FeatureMatrix, blocks: list[np.ndarray], tags, columns, config) -> FeatureMatrix:
    k = len(blocks)
    return FeatureMatrix(
        np.concatenate(blocks),
        columns,
        np.tile(m.recording_ids, k),
        np.tile(m.timesteps, k),
        np.repeat(np.array([str(t) for t in tags], dtype=object), m.n_rows),
        None if m.labels is None else np.tile(m.labels, k),
        config,
        m.plan,
    )


def swap_limbs(V: np.ndarray, upper: bool, lower: bool) -> np.ndarray:
    perm = list(range(len(LIMBS)))
    if upper:
        a, b = LimbId.LEFT_ARM.index, LimbId.RIGHT_ARM.index
        perm[a], perm[b] = perm[b], perm[a]
    if lower:
        a, b = LimbId.LEFT_LEG.index, LimbId.RIGHT_LEG.index
        perm[a], perm[b] = perm[b], perm[a]
    return V[:, perm]


def lr_swap_expand(m: FeatureMatrix) -> FeatureMatrix:
    """Stack the no/upper/lower/both left-right swapped copies of every row."""
    V = _raw_blocks(m)
    blocks = [swap_limbs(V, t.upper_swapped, t.lower_swapped).reshape(m.n_rows, -1) for t in LR_VARIANTS]
    return _expand(m, blocks, LR_VARIANTS, m.columns, "lr_swap")


def ul_pair_expand(m: FeatureMatrix) -> FeatureMatrix:
    """One row per (arm, leg) pairing, re-keyed to ``arm.*`` / ``leg.*`` columns."""
    V = _raw_blocks(m)
    blocks = []
    for tag in UL_VARIANTS:
        pair = V[:, [tag.arm.index, tag.leg.index]]
        blocks.append(pair.reshape(m.n_rows, -1))
    suffixes = _block_suffixes(m)
    columns = [f"{part}.{ax}|{s}" for part in ("arm", "leg") for ax in AXES for s in suffixes]
    return _expand(m, blocks, UL_VARIANTS, columns, "ul_pair")


def apply_mode(m: FeatureMatrix, mode: str) -> FeatureMatrix:
    """Transform an extracted matrix into the layout a pipeline mode trains on.

    ``smv`` matrices pass through unchanged; every other mode needs raw input.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "smv":
        if m.config != "smv":
            raise ValueError("smv mode needs a matrix extracted with channel_config='smv'")
        return m
    if mode == "raw":
        _raw_blocks(m)
        return m
    if mode == "lr_swap":
        return lr_swap_expand(m)
    if mode == "ul_pair":
        return ul_pair_expand(m)
    return rotation_invariant_aggregate(m, mode)


def aggregate_variants(probs: ProbabilityMatrix) -> ProbabilityMatrix:
    """Soft-vote the variant rows of each (recording, timestep).

    Output rows are ordered by recording (first appearance) then timestep.
    """
    order_of = {rid: i for i, rid in enumerate(probs.recordings())}
    rec_rank = np.array([order_of[r] for r in probs.recording_ids])
    variants = probs.variants.astype(str)
    order = np.lexsort((variants, probs.timesteps, rec_rank))
    rec_rank, steps, variants = rec_rank[order], probs.timesteps[order], variants[order]

    boundary = np.flatnonzero((np.diff(rec_rank) != 0) | (np.diff(steps) != 0)) + 1
    starts = np.concatenate([[0], boundary])
    sizes = np.diff(np.concatenate([starts, [len(order)]]))
    k = sizes[0]
    if not (sizes == k).all():
        raise InconsistentVariants("timesteps carry different numbers of variants")
    grid = variants.reshape(-1, k)
    if not (grid == grid[0]).all() or len(set(grid[0])) != k:
        raise InconsistentVariants("timesteps carry different variant sets")

    mean = probs.values[order].reshape(-1, k, probs.n_classes).mean(axis=1)
    return ProbabilityMatrix(mean, probs.recording_ids[order][starts], steps[starts], None, probs.stride_s)
