"""Acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL verdict line (printed in the terminal summary)
before asserting. Tolerances are pinned as module constants.
"""

import math
import os
import time

import numpy as np
import pytest

from conftest import VERDICTS
from oracles import spectral_entropy as oracle_spectral_entropy
from oracles import time_features as oracle_time_features
from wearpipe.augment import (
    LR_VARIANTS,
    apply_mode,
    lr_swap_expand,
    rotation_invariant_aggregate,
    swap_limbs,
    ul_pair_expand,
)
from wearpipe.features import (
    TIME_FEATURES,
    FeatureMatrix,
    WindowPlan,
    extract,
    spectral_entropy_batch,
    time_domain_batch,
)
from wearpipe.ingest import Recording
from wearpipe.model import GbdtConfig, _best_split, _build_histogram, apply_bins, bin_edges, fit, predict_proba
from wearpipe.pipeline import PipelineConfig, extract_cohort, run_cv
from wearpipe.postprocess import RuleBoostConfig, SmoothingConfig, rule_boost, smooth_sequence
from wearpipe.synth import SynthConfig, generate

# criterion 1
COUNTS = {"per_channel": 166, "raw": 1992, "smv": 664, "stat2": 1328, "stat3": 1992, "sort": 1992, "ul_pair": 996}
# criterion 2
TIME_RTOL = 1e-9
SPECTRAL_RTOL = 1e-6
ABS_FLOOR = 1e-12  # values that are exactly zero in the oracle (e.g. skew of symmetric data)
ORACLE_LENGTHS = (2, 3, 50, 1600)
ORACLE_WINDOWS = 100
ORACLE_BUDGET_S = 60.0
# criterion 3
ALGEBRA_SEEDS = 20
# criterion 4
LOSS_ITERATIONS = 100
GBDT_BUDGET_S = 120.0
# criterion 5
KERNEL_RATIO_TOL = 1e-12
# criterion 6
BENCH_SEEDS = (0, 1, 2, 3, 4)
BENCH_MIN_F1 = 0.90
BENCH_BUDGET_S = 600.0
# criterion 7
DIRECTION_SEEDS = tuple(range(10))
DIRECTION_MIN_WINS = 8
FLIP_PROB = 0.3
# criterion 8
EXPANSION_MAX_DELTA = 1e-3

# Reduced boosting budget for the desk-scale benchmarks (see README).
BENCH_GBDT = GbdtConfig(iterations=20, learning_rate=0.3)


def verdict(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)


def _recording(seconds: float, seed: int) -> Recording:
    rng = np.random.default_rng(seed)
    return Recording("acc", rng.normal(size=(int(seconds * 50), 4, 3)))


# --------------------------------------------------------------------------


def test_criterion_01_feature_counts():
    counts = {}
    for seconds, seed in ((0.02, 0), (3.3, 1), (60, 2)):
        raw = extract(_recording(seconds, seed))
        smv = extract(_recording(seconds, seed), channel_config="smv")
        counts.setdefault("per_channel", set()).add(WindowPlan().columns_per_channel)
        counts.setdefault("raw", set()).add(raw.n_columns)
        counts.setdefault("smv", set()).add(smv.n_columns)
        for mode in ("stat2", "stat3", "sort", "ul_pair"):
            counts.setdefault(mode, set()).add(apply_mode(raw, mode).n_columns)
        for mode in ("lr_swap", "ul_pair"):
            assert apply_mode(raw, mode).n_rows == 4 * raw.n_rows
    ok = all(counts[k] == {v} for k, v in COUNTS.items())
    verdict(1, ok, " ".join(f"{k}={sorted(v)}" for k, v in counts.items()))
    assert ok


def test_criterion_02_feature_oracles():
    start = time.perf_counter()
    worst_time, worst_spec = 0.0, 0.0
    ok = True
    for n in ORACLE_LENGTHS:
        rng = np.random.default_rng(n)
        X = rng.normal(size=(ORACLE_WINDOWS, n)) * rng.uniform(0.1, 5, size=(ORACLE_WINDOWS, 1))
        got_t = time_domain_batch(X)
        got_s = spectral_entropy_batch(X, 50.0)
        for i in range(ORACLE_WINDOWS):
            want = oracle_time_features(X[i].tolist())
            for j, name in enumerate(TIME_FEATURES):
                err = abs(got_t[i, j] - want[name])
                ok &= err <= TIME_RTOL * abs(want[name]) + ABS_FLOOR
                worst_time = max(worst_time, err / max(abs(want[name]), 1.0))
            want_s = oracle_spectral_entropy(X[i].tolist(), 50.0)
            if math.isnan(want_s):
                ok &= bool(np.isnan(got_s[i]))
            else:
                err = abs(got_s[i] - want_s)
                ok &= err <= SPECTRAL_RTOL * abs(want_s) + ABS_FLOOR
                worst_spec = max(worst_spec, err)
    elapsed = time.perf_counter() - start
    ok &= elapsed < ORACLE_BUDGET_S
    verdict(2, ok, f"max rel err time={worst_time:.2e} spectral={worst_spec:.2e} runtime={elapsed:.1f}s")
    assert ok


def test_criterion_03_augmentation_algebra():
    ok = True
    plan = WindowPlan(sizes_s=(1, 2))
    for seed in range(ALGEBRA_SEEDS):
        rng = np.random.default_rng(seed)
        m = extract(Recording("r", rng.normal(size=(150, 4, 3))), plan)
        values = m.values.copy()
        values[rng.random(values.shape) < 0.05] = np.nan
        m = m.with_values(values, m.columns, "raw")
        V = values.reshape(m.n_rows, 4, 3, -1)

        for u in (False, True):
            for l in (False, True):
                ok &= np.array_equal(swap_limbs(swap_limbs(V, u, l), u, l), V, equal_nan=True)
        lr = lr_swap_expand(m)
        ul = ul_pair_expand(m)
        ok &= lr.n_rows == ul.n_rows == 4 * m.n_rows
        none_rows = lr.variants == str(LR_VARIANTS[0])
        ok &= np.array_equal(lr.values[none_rows], m.values, equal_nan=True)

        srt = rotation_invariant_aggregate(m, "sort").values
        perm_vals = V[:, :, rng.permutation(3), :].reshape(m.n_rows, -1)
        permuted = rotation_invariant_aggregate(m.with_values(perm_vals, m.columns, "raw"), "sort").values
        ok &= np.array_equal(srt, permuted, equal_nan=True)
    verdict(3, ok, f"{ALGEBRA_SEEDS} seeded matrices, exact equality")
    assert ok


def _exhaustive_split(X, g, h, l2, mcw):
    best = (0.0, -1, None)
    G, H = g.sum(), h.sum()
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cg, ch = np.cumsum(g[order]), np.cumsum(h[order])
        for i in range(len(xs) - 1):
            if xs[i] == xs[i + 1] or ch[i] < mcw or H - ch[i] < mcw:
                continue
            gain = cg[i] ** 2 / (ch[i] + l2) + (G - cg[i]) ** 2 / (H - ch[i] + l2) - G * G / (H + l2)
            if gain > best[0]:
                best = (gain, f, xs[i])
    return best


def test_criterion_04_gbdt():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    n, k = 600, 5
    y = rng.integers(0, k, n)
    X = rng.normal(size=(k, 8))[y] + rng.normal(size=(n, 8))
    X[rng.random(X.shape) < 0.05] = np.nan
    m = FeatureMatrix(X, [f"f{i}" for i in range(8)], np.array(["r"] * n, dtype=object), np.arange(n), labels=y)
    model = fit(m, GbdtConfig(iterations=LOSS_ITERATIONS, seed=7))
    monotone = bool((np.diff(model.train_loss) <= 0).all())

    again = fit(m, GbdtConfig(iterations=LOSS_ITERATIONS, seed=7))
    deterministic = np.array_equal(predict_proba(model, m).values, predict_proba(again, m).values)

    fidelity = True
    for seed in range(20):
        r = np.random.default_rng(seed)
        Xs = np.column_stack([r.integers(0, r.integers(2, 33), 150) * 1.7 - 3 for _ in range(6)]).astype(float)
        g, h = r.normal(size=150) / 150, r.uniform(0.05, 1, 150) / 150
        edges = bin_edges(Xs, 32)
        hist = _build_histogram(apply_bins(Xs, edges, 32), np.arange(150), g, h, 33)
        gain, f, b, _ = _best_split(hist, np.array([len(e) + 1 for e in edges]), 32, 1e-4, 1e-7)
        want = _exhaustive_split(Xs, g, h, 1e-4, 1e-7)
        fidelity &= f == want[1] and edges[f][b] == want[2] and math.isclose(gain, want[0], rel_tol=1e-9)

    elapsed = time.perf_counter() - start
    ok = monotone and deterministic and fidelity and elapsed < GBDT_BUDGET_S
    verdict(4, ok, f"monotone={monotone} deterministic={deterministic} histogram==exhaustive={fidelity} "
                   f"runtime={elapsed:.1f}s")
    assert ok


def test_criterion_05_smoothing():
    cfg = SmoothingConfig()
    w = cfg.kernel()
    ratio_err = abs(w[-1] / w[cfg.half_width_steps] - math.exp(-100 / 72))
    unit = abs(w.sum() - 1.0) <= 1e-12
    P = np.tile([0.2, 0.5, 0.3], (40, 1))
    constant = np.allclose(smooth_sequence(P, cfg), P, rtol=0, atol=1e-15)
    labels = np.zeros(60, dtype=int)
    labels[30] = 1
    Q = np.full((60, 3), 0.05)
    Q[np.arange(60), labels] = 0.9
    impulse = bool((smooth_sequence(Q, cfg).argmax(axis=1) == 0).all())
    ok = ratio_err <= KERNEL_RATIO_TOL and unit and constant and impulse
    verdict(5, ok, f"|w10/w0 - exp(-100/72)|={ratio_err:.1e} unit_sum={unit} constant={constant} impulse={impulse}")
    assert ok


# --------------------------------------------------------------------------
# end-to-end benchmarks


def _bench(seed: int, modes, **synth):
    cohort = generate(SynthConfig(seed=seed, **synth))
    base = PipelineConfig(gbdt=BENCH_GBDT, seed=seed)
    feats = extract_cohort(cohort.recordings, base.plan)
    return {mode: run_cv(cohort.recordings, base.with_overrides(mode=mode), cohort.vocabulary, feats)
            for mode in modes}


@pytest.fixture(scope="module")
def benchmark():
    start = time.perf_counter()
    runs = [_bench(seed, ["raw"])["raw"] for seed in BENCH_SEEDS]
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_06_benchmark(benchmark):
    runs, elapsed = benchmark
    scores = [r.f1 for r in runs]
    mean = float(np.mean(scores))
    ok = mean >= BENCH_MIN_F1 and elapsed < BENCH_BUDGET_S
    verdict(6, ok, f"mean raw F1={mean:.4f} over seeds {list(BENCH_SEEDS)} "
                   f"({', '.join(f'{s:.4f}' for s in scores)}) runtime={elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_07_directional():
    rows = []
    for seed in DIRECTION_SEEDS:
        res = _bench(seed, ["raw", "lr_swap", "ul_pair"], orientation_flip_prob=FLIP_PROB)
        rows.append({m: (r.f1, r.f1_pp) for m, r in res.items()})
    ul_wins = sum(r["ul_pair"][0] >= r["raw"][0] for r in rows)
    lr_wins = sum(r["lr_swap"][0] >= r["raw"][0] for r in rows)
    pp_wins = sum(r["raw"][1] >= r["raw"][0] for r in rows)
    means = {m: float(np.mean([r[m][0] for r in rows])) for m in ("raw", "lr_swap", "ul_pair")}
    ok = min(ul_wins, lr_wins, pp_wins) >= DIRECTION_MIN_WINS
    verdict(7, ok, f"UL>=raw {ul_wins}/10, LR>=raw {lr_wins}/10, F1_PP>=F1 {pp_wins}/10; mean F1 "
                   + " ".join(f"{m}={v:.4f}" for m, v in means.items()))
    assert ok


@pytest.mark.slow
def test_criterion_08_expansion(benchmark):
    runs, _ = benchmark
    deltas = [abs(r.f1_pp - r.timestep_f1_pp) for r in runs]
    ok = max(deltas) < EXPANSION_MAX_DELTA
    verdict(8, ok, "|sample F1 - timestep F1| per seed: " + ", ".join(f"{d:.5f}" for d in deltas))
    assert ok


def test_criterion_09_rule_boost():
    cfg = RuleBoostConfig()
    step = lambda s: int(s / 0.5)
    K = 4

    def base(n):
        P = np.full((n, K), 0.05)
        P[:, 0] = 0.85
        return P

    # present for 90 s: untouched even with a strong candidate region elsewhere
    P = base(step(200))
    labels = np.zeros(step(200), dtype=int)
    labels[: step(90)] = 1
    P[step(100):, 1] = 0.3
    present = np.array_equal(rule_boost(P, labels, cfg), labels)

    # absent class holding p = 0.3 under a 60 s null stretch: relabeled
    P = base(step(120))
    region = slice(step(30), step(90))
    P[region, 2], P[region, 0] = 0.3, 0.6
    labels = np.zeros(step(120), dtype=int)
    want = labels.copy()
    want[region] = 2
    boosted = np.array_equal(rule_boost(P, labels, cfg), want)

    # absent class whose best region is only 10 s: unchanged
    P = base(step(120))
    P[step(30):step(40), 3] = 0.3
    labels = np.zeros(step(120), dtype=int)
    short = np.array_equal(rule_boost(P, labels, cfg), labels)

    # randomized: classes meeting the presence rule are never altered
    rng = np.random.default_rng(0)
    preserved = True
    for _ in range(200):
        n = step(150)
        Pr = rng.dirichlet(np.ones(K), n)
        lab = rng.integers(0, K, n)
        lab[rng.random(n) < 0.5] = 0
        out = rule_boost(Pr, lab, RuleBoostConfig(candidate_prob_floor=0.05, min_region_s=2))
        for c in range(1, K):
            if (lab == c).sum() * 0.5 >= cfg.min_presence_s:
                preserved &= np.array_equal(out == c, lab == c)
        preserved &= bool((lab[out != lab] == 0).all())
    ok = present and boosted and short and preserved
    verdict(9, ok, f"present={present} boosted={boosted} short_region={short} presence_rule_preserved={preserved}")
    assert ok


@pytest.mark.skipif(not os.environ.get("WEAR_DATA"), reason="optional: set WEAR_DATA to a local dataset copy")
def test_criterion_10_full_data():
    from wearpipe.synth import load_cohort

    recs, vocab = load_cohort(os.environ["WEAR_DATA"])
    result = run_cv(recs, PipelineConfig(mode="ul_pair"), vocab)
    ok = abs(result.f1_pp - 0.9187) <= 0.03
    verdict(10, ok, f"ul_pair F1_PP={result.f1_pp:.4f} (advisory target 0.9187 +- 0.03)")
    assert ok
