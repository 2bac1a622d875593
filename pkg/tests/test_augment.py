import itertools

import numpy as np
import pytest

from wearpipe.augment import (
    LR_VARIANTS,
    UL_VARIANTS,
    VariantTag,
    aggregate_variants,
    apply_mode,
    lr_swap_expand,
    rotation_invariant_aggregate,
    swap_limbs,
    ul_pair_expand,
)
from wearpipe.errors import InconsistentVariants, NotRawConfig
from wearpipe.features import FeatureMatrix, WindowPlan, channel_columns, raw_channels, smv_channels
from wearpipe.ingest import LimbId
from wearpipe.probability import ProbabilityMatrix

RAW_COLUMNS = [c for ch in raw_channels() for c in channel_columns(ch, WindowPlan())]


def raw_matrix(rows=5, seed=0, nan_frac=0.0):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(rows, len(RAW_COLUMNS)))
    values[rng.random(values.shape) < nan_frac] = np.nan
    return FeatureMatrix(values, RAW_COLUMNS, np.array(["r"] * rows, dtype=object), np.arange(rows),
                         labels=rng.integers(0, 4, rows))


def col(m, name):
    return m.columns.index(name)


class TestVariantTag:
    def test_counts(self):
        assert len(set(LR_VARIANTS)) == 4 and len(set(UL_VARIANTS)) == 4

    @pytest.mark.parametrize("tag", [VariantTag(), *LR_VARIANTS, *UL_VARIANTS])
    def test_roundtrip(self, tag):
        assert VariantTag.parse(str(tag)) == tag


class TestRotationInvariant:
    @pytest.mark.parametrize("kind, n", [("stat2", 1328), ("stat3", 1992), ("sort", 1992)])
    def test_column_counts(self, kind, n):
        out = rotation_invariant_aggregate(raw_matrix(), kind)
        assert out.n_columns == n and out.n_rows == 5
        assert len(set(out.columns)) == n

    def test_identical_axes(self):
        m = raw_matrix(rows=2)
        V = m.values.reshape(2, 4, 3, -1)
        V[:, :, 1] = V[:, :, 0]
        V[:, :, 2] = V[:, :, 0]
        m = m.with_values(V.reshape(2, -1), m.columns, "raw")
        v = V[:, 0, 0, 0]
        s = rotation_invariant_aggregate(m, "sort")
        key = m.columns[0].split("|", 1)[1]
        for stat in ("min", "mid", "max"):
            assert np.array_equal(s.values[:, col(s, f"left_arm.{stat}|{key}")], v)
        s2 = rotation_invariant_aggregate(m, "stat2")
        assert np.allclose(s2.values[:, col(s2, f"left_arm.mean|{key}")], v, rtol=1e-15)
        assert np.allclose(s2.values[:, col(s2, f"left_arm.std|{key}")], 0, atol=1e-15)

    def test_missing_group_propagates(self):
        m = raw_matrix(rows=1)
        m.values[0, 0] = np.nan  # left_arm.x, first key
        key = m.columns[0].split("|", 1)[1]
        for kind in ("stat2", "stat3", "sort"):
            out = rotation_invariant_aggregate(m, kind)
            cols = [i for i, c in enumerate(out.columns) if c.startswith("left_arm.") and c.endswith("|" + key)]
            assert np.isnan(out.values[0, cols]).all()
            assert np.isfinite(np.delete(out.values[0], cols)).all()

    def test_rejects_non_raw(self):
        m = raw_matrix()
        smv = FeatureMatrix(m.values[:, :664], [c for ch in smv_channels() for c in channel_columns(ch, WindowPlan())],
                            m.recording_ids, m.timesteps, config="smv")
        for fn in (lambda x: rotation_invariant_aggregate(x, "sort"), lr_swap_expand, ul_pair_expand):
            with pytest.raises(NotRawConfig):
                fn(smv)


class TestLrSwap:
    def test_shape_and_identity(self):
        m = raw_matrix(rows=7)
        out = lr_swap_expand(m)
        assert out.values.shape == (28, 1992)
        none = out.take(out.variants == str(LR_VARIANTS[0]))
        assert np.array_equal(none.values, m.values)
        assert np.array_equal(none.labels, m.labels)
        assert np.array_equal(none.timesteps, m.timesteps)

    def test_upper_swap_moves_blocks(self):
        m = raw_matrix(rows=3)
        out = lr_swap_expand(m)
        upper = out.take(out.variants == "lr_swap:1:0")
        key = m.columns[5].split("|", 1)[1]
        assert np.array_equal(upper.values[:, col(m, f"left_arm.y|{key}")], m.values[:, col(m, f"right_arm.y|{key}")])
        assert np.array_equal(upper.values[:, col(m, f"left_leg.y|{key}")], m.values[:, col(m, f"left_leg.y|{key}")])

    def test_symmetric_row_fixed(self):
        m = raw_matrix(rows=2)
        V = m.values.reshape(2, 4, 3, -1)
        V[:, LimbId.RIGHT_ARM.index] = V[:, LimbId.LEFT_ARM.index]
        upper = swap_limbs(V, True, False)
        assert np.array_equal(upper, V)


class TestUlPair:
    def test_shape(self):
        out = ul_pair_expand(raw_matrix(rows=6))
        assert out.values.shape == (24, 996)
        assert sorted(set(out.variants)) == sorted(str(t) for t in UL_VARIANTS)

    def test_projection(self):
        m = raw_matrix(rows=4)
        out = ul_pair_expand(m)
        ll = out.take(out.variants == "ul_pair:left_arm:left_leg")
        key = m.columns[17].split("|", 1)[1]
        for ax in "xyz":
            assert np.array_equal(ll.values[:, col(out, f"arm.{ax}|{key}")], m.values[:, col(m, f"left_arm.{ax}|{key}")])
            assert np.array_equal(ll.values[:, col(out, f"leg.{ax}|{key}")], m.values[:, col(m, f"left_leg.{ax}|{key}")])

    def test_missing_right_side_does_not_leak(self):
        m = raw_matrix(rows=3)
        V = m.values.reshape(3, 4, 3, -1)
        V[:, LimbId.RIGHT_ARM.index] = np.nan
        V[:, LimbId.RIGHT_LEG.index] = np.nan
        out = ul_pair_expand(m.with_values(V.reshape(3, -1), m.columns, "raw"))
        ll = out.take(out.variants == "ul_pair:left_arm:left_leg")
        assert np.isfinite(ll.values).all()


def test_apply_mode_counts():
    m = raw_matrix(rows=2)
    counts = {"raw": (2, 1992), "stat2": (2, 1328), "stat3": (2, 1992), "sort": (2, 1992),
              "lr_swap": (8, 1992), "ul_pair": (8, 996)}
    for mode, shape in counts.items():
        assert apply_mode(m, mode).values.shape == shape


def probs(rows, variants, steps, recs=None):
    rows = np.asarray(rows, dtype=float)
    recs = recs if recs is not None else ["a"] * len(rows)
    return ProbabilityMatrix(rows, np.array(recs, dtype=object), np.array(steps), np.array(variants, dtype=object))


class TestAggregateVariants:
    def test_identical_rows(self):
        row = [0.1, 0.2, 0.7]
        tags = [str(t) for t in LR_VARIANTS]
        out = aggregate_variants(probs([row] * 4, tags, [0] * 4))
        assert np.allclose(out.values, [row], rtol=0, atol=1e-15)

    def test_mean(self):
        tags = [str(t) for t in UL_VARIANTS]
        out = aggregate_variants(probs([[1, 0, 0], [1, 0, 0], [1, 0, 0], [0, 1, 0]], tags, [3] * 4))
        assert np.allclose(out.values, [[0.75, 0.25, 0]])
        assert out.timesteps.tolist() == [3]

    def test_groups_and_order(self):
        tags = ["lr_swap:0:0", "lr_swap:1:0"]
        p = probs([[0, 1], [1, 0], [1, 0], [0.5, 0.5], [0.2, 0.8], [0.4, 0.6]],
                  [tags[1], tags[0], tags[0], tags[1], tags[0], tags[1]],
                  [1, 1, 0, 0, 0, 0], recs=["a", "a", "a", "a", "b", "b"])
        out = aggregate_variants(p)
        assert out.recording_ids.tolist() == ["a", "a", "b"]
        assert out.timesteps.tolist() == [0, 1, 0]
        assert np.allclose(out.values, [[0.75, 0.25], [0.5, 0.5], [0.3, 0.7]])
        assert np.allclose(out.values.sum(axis=1), 1, atol=1e-9)

    def test_inconsistent(self):
        with pytest.raises(InconsistentVariants):
            aggregate_variants(probs([[1, 0], [1, 0], [1, 0]], ["lr_swap:0:0", "lr_swap:1:0", "lr_swap:0:0"], [0, 0, 1]))
        with pytest.raises(InconsistentVariants):
            aggregate_variants(probs([[1, 0]] * 4, ["lr_swap:0:0", "lr_swap:1:0", "lr_swap:0:0", "lr_swap:0:1"], [0, 0, 1, 1]))

    def test_plurality_agreement_bruteforce(self):
        # 3:1 argmax agreement with margins >= 0.5 must survive soft voting
        rng = np.random.default_rng(5)
        k = 6
        tags = [str(t) for t in LR_VARIANTS]
        for _ in range(500):
            winner, other = rng.choice(k, size=2, replace=False)
            rows = []
            for v in range(4):
                top = winner if v < 3 else other
                p = rng.dirichlet(np.ones(k)) * 0.25
                p[top] += 0.75
                rows.append(p / p.sum())
            rows = np.array(rows)
            top2 = np.sort(rows, axis=1)[:, -2:]
            if (top2[:, 1] - top2[:, 0] < 0.5).any():
                continue
            out = aggregate_variants(probs(rows, tags, [0] * 4))
            assert out.argmax()[0] == winner


def test_augmentation_algebra_exhaustive():
    for seed in range(20):
        m = raw_matrix(rows=4, seed=seed, nan_frac=0.05)
        V = m.values.reshape(4, 4, 3, -1)
        for upper, lower in itertools.product([False, True], repeat=2):
            twice = swap_limbs(swap_limbs(V, upper, lower), upper, lower)
            assert np.array_equal(twice, V, equal_nan=True)
        assert lr_swap_expand(m).n_rows == ul_pair_expand(m).n_rows == 16
        base = rotation_invariant_aggregate(m, "sort").values
        for perm in itertools.permutations(range(3)):
            pm = m.with_values(V[:, :, list(perm)].reshape(4, -1), m.columns, "raw")
            assert np.array_equal(rotation_invariant_aggregate(pm, "sort").values, base, equal_nan=True)
