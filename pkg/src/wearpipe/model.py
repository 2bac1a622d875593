"""Multiclass histogram gradient-boosted trees.

Softmax boosting with one depth-limited regression tree per class and
iteration. Features are pre-binned into at most ``histogram_bins`` bins whose
edges are actual training values; NaN gets a bin of its own and is routed at
every split to the side that gave the larger gain.

Sample weights are the balanced class weights rescaled to sum to one, so the
L2 leaf penalty and the minimum child hessian are fractions of the total
training weight. With that scaling, duplicating the training set leaves the
fitted trees unchanged.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from numba import njit

from .errors import EmptyLabels, InvalidConfig, SchemaMismatch, SingleClass
from .features import FeatureMatrix
from .probability import ProbabilityMatrix

HESSIAN_FLOOR = 1e-16


@dataclass(frozen=True)
class GbdtConfig:
    iterations: int = 1000
    max_depth: int = 5
    histogram_bins: int = 32
    class_weighting: str = "balanced"
    learning_rate: float = 0.1
    seed: int = 0
    l2_leaf_reg: float = 1e-4
    min_child_weight: float = 1e-7

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidConfig("iterations must be >= 1")
        if not 2 <= self.histogram_bins <= 255:
            raise InvalidConfig("histogram_bins must be in [2, 255]")
        if self.max_depth < 1:
            raise InvalidConfig("max_depth must be >= 1")
        if self.class_weighting not in ("balanced", "none"):
            raise InvalidConfig(f"unknown class_weighting {self.class_weighting!r}")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")


class Classifier(Protocol):
    """What the pipeline needs from a trained backend."""

    schema_hash: str

    def predict_proba(self, m: FeatureMatrix) -> ProbabilityMatrix: ...

    def save(self, path: str | Path) -> None: ...


def compute_class_weights(labels: np.ndarray, n_classes: int | None = None) -> np.ndarray:
    """Balanced weights ``N / (K_present * n_k)``; absent classes get 0."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyLabels("no labels to weight")
    n_classes = n_classes or int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    present = counts > 0
    weights = np.zeros(n_classes)
    weights[present] = labels.size / (present.sum() * counts[present])
    return weights


# --------------------------------------------------------------------------
# binning
# --------------------------------------------------------------------------


def bin_edges(X: np.ndarray, max_bins: int) -> list[np.ndarray]:
    """Split candidates per feature: ``x <= edge`` falls left.

    With at most ``max_bins`` distinct values every distinct value but the
    largest is an edge; otherwise edges are empirical-CDF quantiles.
    """
    edges = []
    probs = np.arange(1, max_bins) / max_bins
    for f in range(X.shape[1]):
        col = X[:, f]
        col = col[~np.isnan(col)]
        if col.size == 0:
            edges.append(np.empty(0))
            continue
        u = np.unique(col)
        if u.size <= max_bins:
            edges.append(u[:-1])
        else:
            q = np.unique(np.quantile(col, probs, method="inverted_cdf"))
            edges.append(q[q < u[-1]])
    return edges


def apply_bins(X: np.ndarray, edges: list[np.ndarray], missing_bin: int) -> np.ndarray:
    Xb = np.empty(X.shape, dtype=np.uint8)
    for f, e in enumerate(edges):
        col = X[:, f]
        b = np.searchsorted(e, col, side="left")
        b[np.isnan(col)] = missing_bin
        Xb[:, f] = b
    return Xb


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def _build_histogram(Xb, rows, g, h, n_slots):
    n_features = Xb.shape[1]
    hist = np.zeros((n_features, n_slots, 2))
    for r in rows:
        gr = g[r]
        hr = h[r]
        for f in range(n_features):
            b = Xb[r, f]
            hist[f, b, 0] += gr
            hist[f, b, 1] += hr
    return hist


@njit(cache=True)
def _best_split(hist, n_bins, missing_bin, l2, min_child_weight):
    """Return (gain, feature, bin, missing_left); feature -1 when none is valid.

    Every row carries a strictly positive hessian, so a child is non-empty
    exactly when its hessian sum is positive.
    """
    n_features = hist.shape[0]
    best_gain = 0.0
    best_f = -1
    best_b = -1
    best_ml = False
    for f in range(n_features):
        nb = n_bins[f]
        if nb < 2:
            continue
        mg = hist[f, missing_bin, 0]
        mh = hist[f, missing_bin, 1]
        tg = mg
        th = mh
        for b in range(nb):
            tg += hist[f, b, 0]
            th += hist[f, b, 1]
        parent = tg * tg / (th + l2)
        options = 2 if mh > 0 else 1
        lg = 0.0
        lh = 0.0
        for b in range(nb - 1):
            lg += hist[f, b, 0]
            lh += hist[f, b, 1]
            # missing right, then missing left
            for ml in range(options):
                if ml == 0:
                    gl, hl = lg, lh
                else:
                    gl, hl = lg + mg, lh + mh
                gr = tg - gl
                hr = th - hl
                if hl <= 0 or hr <= 0 or hl < min_child_weight or hr < min_child_weight:
                    continue
                gain = gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_b = b
                    best_ml = ml == 1
    return best_gain, best_f, best_b, best_ml


@njit(cache=True)
def _predict_scores(X, feature, threshold, default_left, left, right, value, tree_offsets,
                    tree_class, n_trees, out):
    for i in range(X.shape[0]):
        for t in range(n_trees):
            base = tree_offsets[t]
            node = base
            while feature[node] >= 0:
                x = X[i, feature[node]]
                if x != x:
                    go_left = default_left[node]
                else:
                    go_left = x <= threshold[node]
                node = base + (left[node] if go_left else right[node])
            out[i, tree_class[t]] += value[node]


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# tree growth
# --------------------------------------------------------------------------


@dataclass
class _Tree:
    feature: list = field(default_factory=list)
    bin: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    default_left: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def add(self) -> int:
        for col in (self.feature, self.bin, self.left, self.right):
            col.append(-1)
        self.threshold.append(np.nan)
        self.default_left.append(False)
        self.value.append(0.0)
        return len(self.feature) - 1

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)


def grow_tree(Xb, g, h, edges, n_bins, cfg: GbdtConfig):
    """Greedy depth-wise tree on binned data.

    Returns the tree and, for every training row, the value of the
    leaf it lands in.
    """
    missing = cfg.histogram_bins
    n_slots = missing + 1
    tree = _Tree()
    leaf_of_row = np.zeros(Xb.shape[0])
    root_rows = np.arange(Xb.shape[0], dtype=np.int64)
    stack = [(tree.add(), root_rows, _build_histogram(Xb, root_rows, g, h, n_slots), 0)]
    while stack:
        node, rows, hist, depth = stack.pop(0)
        split = None
        if depth < cfg.max_depth:
            gain, f, b, miss_left = _best_split(hist, n_bins, missing, cfg.l2_leaf_reg, cfg.min_child_weight)
            if f >= 0:
                split = (f, b, miss_left)
        if split is None:
            G = g[rows].sum()
            H = h[rows].sum()
            v = -cfg.learning_rate * G / (H + cfg.l2_leaf_reg)
            tree.value[node] = v
            leaf_of_row[rows] = v
            continue

        f, b, miss_left = split
        col = Xb[rows, f]
        is_missing = col == missing
        if not is_missing.any():
            # nothing to learn a default from: follow the heavier child
            lh = h[rows[col <= b]].sum()
            miss_left = lh >= h[rows].sum() - lh
        go_left = np.where(is_missing, miss_left, col <= b)
        lrows, rrows = rows[go_left], rows[~go_left]

        if len(lrows) <= len(rrows):
            lhist = _build_histogram(Xb, lrows, g, h, n_slots)
            rhist = hist - lhist
        else:
            rhist = _build_histogram(Xb, rrows, g, h, n_slots)
            lhist = hist - rhist

        tree.feature[node] = f
        tree.bin[node] = b
        tree.threshold[node] = edges[f][b]
        tree.default_left[node] = bool(miss_left)
        lnode, rnode = tree.add(), tree.add()
        tree.left[node], tree.right[node] = lnode, rnode
        stack.append((lnode, lrows, lhist, depth + 1))
        stack.append((rnode, rrows, rhist, depth + 1))
    return tree, leaf_of_row


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


@dataclass(eq=False)
class GbdtModel:
    config: GbdtConfig
    n_classes: int
    columns: tuple[str, ...]
    schema_hash: str
    class_weights: np.ndarray
    edges: list[np.ndarray]
    feature: np.ndarray
    bin: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    tree_offsets: np.ndarray
    train_loss: np.ndarray
    mode: str = "raw"
    class_names: tuple[str, ...] | None = None

    @property
    def n_trees(self) -> int:
        return len(self.tree_offsets)

    @property
    def n_iterations(self) -> int:
        return self.n_trees // self.n_classes

    def tree_depths(self) -> list[int]:
        depths = []
        ends = np.append(self.tree_offsets[1:], len(self.feature))
        for start, end in zip(self.tree_offsets, ends):
            t = _Tree(list(self.feature[start:end]), [], [], [], list(self.left[start:end]),
                      list(self.right[start:end]))
            depths.append(t.depth)
        return depths

    def decision_function(self, m: FeatureMatrix, iterations: int | None = None) -> np.ndarray:
        if m.schema_hash != self.schema_hash:
            raise SchemaMismatch("feature matrix schema differs from the training schema")
        n_iter = self.n_iterations if iterations is None else min(iterations, self.n_iterations)
        n_trees = n_iter * self.n_classes
        out = np.zeros((m.n_rows, self.n_classes))
        tree_class = (np.arange(self.n_trees) % self.n_classes).astype(np.int64)
        _predict_scores(np.ascontiguousarray(m.values, dtype=np.float64), self.feature, self.threshold,
                        self.default_left, self.left, self.right, self.value, self.tree_offsets,
                        tree_class, n_trees, out)
        return out

    def predict_proba(self, m: FeatureMatrix, iterations: int | None = None) -> ProbabilityMatrix:
        return predict_proba(self, m, iterations)

    def save(self, path: str | Path) -> None:
        meta = dict(config=asdict(self.config), n_classes=self.n_classes, columns=list(self.columns),
                    schema_hash=self.schema_hash, mode=self.mode, format="wearpipe-gbdt/1",
                    class_names=list(self.class_names) if self.class_names else None)
        n_edges = np.array([len(e) for e in self.edges])
        flat_edges = np.concatenate(self.edges) if self.edges else np.empty(0)
        with Path(path).open("wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), class_weights=self.class_weights,
                     n_edges=n_edges, edges=flat_edges, feature=self.feature, bin=self.bin,
                     threshold=self.threshold, default_left=self.default_left, left=self.left,
                     right=self.right, value=self.value, tree_offsets=self.tree_offsets,
                     train_loss=self.train_loss)

    @classmethod
    def load(cls, path: str | Path) -> "GbdtModel":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            splits = np.cumsum(z["n_edges"])[:-1]
            edges = np.split(z["edges"], splits) if len(z["n_edges"]) else []
            return cls(
                GbdtConfig(**meta["config"]), meta["n_classes"], tuple(meta["columns"]),
                meta["schema_hash"], z["class_weights"], edges, z["feature"], z["bin"],
                z["threshold"], z["default_left"], z["left"], z["right"], z["value"],
                z["tree_offsets"], z["train_loss"], meta.get("mode", "raw"),
                tuple(meta["class_names"]) if meta.get("class_names") else None,
            )


def weighted_log_loss(P: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    p = np.clip(P[np.arange(len(y)), y], 1e-300, None)
    return float(-(w * np.log(p)).sum())


def fit(m: FeatureMatrix, cfg: GbdtConfig | None = None, n_classes: int | None = None,
        callback=None) -> GbdtModel:
    """Train on the labeled rows of ``m``.

    ``callback(iteration, loss)`` is called after every boosting round.
    """
    cfg = cfg or GbdtConfig()
    if m.labels is None or m.n_rows == 0:
        raise EmptyLabels("feature matrix has no labels")
    y = np.asarray(m.labels, dtype=np.int64)
    n_classes = n_classes or int(y.max()) + 1
    if y.max() >= n_classes or y.min() < 0:
        raise SchemaMismatch(f"labels outside [0, {n_classes})")
    if np.unique(y).size < 2:
        raise SingleClass("need at least two classes to fit")

    if cfg.class_weighting == "balanced":
        cw = compute_class_weights(y, n_classes)
    else:
        cw = np.where(np.bincount(y, minlength=n_classes) > 0, 1.0, 0.0)
    w = cw[y]
    w = w / w.sum()

    X = np.asarray(m.values, dtype=np.float64)
    edges = bin_edges(X, cfg.histogram_bins)
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    Xb = np.ascontiguousarray(apply_bins(X, edges, cfg.histogram_bins))

    Y = np.zeros((len(y), n_classes))
    Y[np.arange(len(y)), y] = 1.0
    scores = np.zeros((len(y), n_classes))

    nodes = {k: [] for k in ("feature", "bin", "threshold", "default_left", "left", "right", "value")}
    offsets = []
    losses = [weighted_log_loss(softmax(scores), y, w)]
    n_nodes = 0
    for it in range(cfg.iterations):
        P = softmax(scores)
        updates = []
        for k in range(n_classes):
            g = w * (P[:, k] - Y[:, k])
            h = w * np.maximum(P[:, k] * (1.0 - P[:, k]), HESSIAN_FLOOR)
            tree, leaf_values = grow_tree(Xb, g, h, edges, n_bins, cfg)
            offsets.append(n_nodes)
            n_nodes += len(tree.feature)
            for key in nodes:
                nodes[key].extend(getattr(tree, key))
            updates.append(leaf_values)
        for k in range(n_classes):
            scores[:, k] += updates[k]
        losses.append(weighted_log_loss(softmax(scores), y, w))
        if callback is not None:
            callback(it, losses[-1])

    return GbdtModel(
        config=cfg,
        n_classes=n_classes,
        columns=m.columns,
        schema_hash=m.schema_hash,
        class_weights=cw,
        edges=edges,
        feature=np.array(nodes["feature"], dtype=np.int64),
        bin=np.array(nodes["bin"], dtype=np.int64),
        threshold=np.array(nodes["threshold"], dtype=np.float64),
        default_left=np.array(nodes["default_left"], dtype=np.bool_),
        left=np.array(nodes["left"], dtype=np.int64),
        right=np.array(nodes["right"], dtype=np.int64),
        value=np.array(nodes["value"], dtype=np.float64),
        tree_offsets=np.array(offsets, dtype=np.int64),
        train_loss=np.array(losses),
        mode=m.config,
    )


def predict_proba(model: GbdtModel, m: FeatureMatrix, iterations: int | None = None) -> ProbabilityMatrix:
    """Softmax of the boosted scores; ``iterations`` truncates the ensemble."""
    P = softmax(model.decision_function(m, iterations))
    return ProbabilityMatrix(P, m.recording_ids, m.timesteps, m.variants, m.plan.stride_s)
