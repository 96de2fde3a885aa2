"""Bagged CART regression forests with out-of-bag bookkeeping.

Trees are grown greedily on a resample of the training data: at each node a
random feature subset of size mtry is drawn, every midpoint between
consecutive distinct in-node values is scored by weighted variance
reduction, and the best (feature, threshold) pair wins, ties going to the
smallest feature index and then the smallest threshold.  Per-tree bag masks
are retained so out-of-bag predictions, residuals, and leaf co-membership
weights can be computed after the fact.

The numeric node kernels come from the active backend (compiled or numpy);
everything here is backend independent, and forests built with either
backend are identical.
"""

import heapq
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import kernels as _K
from ._rng import GOLDEN, MASK64, SplitMix, derive_key, mix64, mul_shift_vec, stream_block

MODEL_FORMAT_VERSION = 1

BOOTSTRAP = "bootstrap"
SUBSAMPLE = "subsample"
_RESAMPLE_MODES = (BOOTSTRAP, SUBSAMPLE)


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyperparameters.

    mtry and resample_count may be left None and are resolved against the
    training dimensions at build time (mtry -> max(1, p // 3),
    resample_count -> n, the defaults of the reference R implementation).
    """

    num_trees: int = 500
    mtry: int | None = None
    resample_count: int | None = None
    resample_mode: str = BOOTSTRAP
    min_node_size: int = 5
    max_terminal_nodes: int | None = None
    seed: int = 0

    def resolved(self, n: int, p: int) -> "ForestConfig":
        """Concrete config for an (n, p) training set; validates invariants."""
        mtry = self.mtry if self.mtry is not None else max(1, p // 3)
        a_n = self.resample_count if self.resample_count is not None else n
        cfg = replace(self, mtry=mtry, resample_count=a_n)
        if cfg.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if not 1 <= mtry <= p:
            raise ValueError(f"mtry must be in [1, {p}], got {mtry}")
        if not 1 <= a_n <= n:
            raise ValueError(f"resample_count must be in [1, {n}], got {a_n}")
        if cfg.resample_mode not in _RESAMPLE_MODES:
            raise ValueError(f"unknown resample_mode {cfg.resample_mode!r}")
        if cfg.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if cfg.max_terminal_nodes is not None and cfg.max_terminal_nodes < 1:
            raise ValueError("max_terminal_nodes must be >= 1")
        if not 0 <= cfg.seed <= MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")
        return cfg


@dataclass(frozen=True)
class BagMask:
    """Per-observation in-bag multiplicities for one tree."""

    counts: np.ndarray  # int32, length n
    resample_mode: str
    resample_count: int

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int32)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if counts.min(initial=0) < 0:
            raise ValueError("bag multiplicities must be non-negative")
        total = int(counts.sum())
        if total != self.resample_count:
            raise ValueError(
                f"bag multiplicities sum to {total}, expected {self.resample_count}"
            )
        if self.resample_mode == SUBSAMPLE and counts.max(initial=0) > 1:
            raise ValueError("subsample bags must be 0/1")

    def oob(self) -> np.ndarray:
        """Boolean mask of observations this tree never saw."""
        return self.counts == 0


@dataclass(frozen=True)
class Tree:
    """A grown CART tree in flat-array form.

    feature[i] >= 0 marks an internal node with its split; feature[i] == -1
    marks a leaf whose prediction is value[i].  samples holds the in-bag
    training indices (repeated per bootstrap multiplicity) grouped so that
    node i owns samples[node_start[i]:node_end[i]]; for leaves that segment
    is the leaf's in-bag multiset.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    node_start: np.ndarray
    node_end: np.ndarray
    samples: np.ndarray
    n_features: int

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "value",
                     "node_start", "node_end", "samples"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    def leaf_members(self, node_id: int) -> np.ndarray:
        """In-bag training indices routed to a leaf (with multiplicity)."""
        if self.feature[node_id] >= 0:
            raise ValueError(f"node {node_id} is not a leaf")
        return self.samples[self.node_start[node_id]:self.node_end[node_id]]


@dataclass(frozen=True)
class Forest:
    """Immutable trained ensemble plus its bag masks."""

    config: ForestConfig
    trees: tuple
    bag_masks: tuple
    n: int
    p: int

    def __post_init__(self):
        if len(self.trees) != len(self.bag_masks):
            raise ValueError("trees and bag_masks must align")
        if len(self.trees) != self.config.num_trees:
            raise ValueError("tree count does not match config")

    @property
    def num_trees(self) -> int:
        return len(self.trees)


@dataclass(frozen=True)
class OobResiduals:
    """Out-of-bag predictions and residuals for the training set.

    Entries with tree_count == 0 have no OOB prediction; their prediction
    and residual slots hold NaN and valid is False there.
    """

    oob_prediction: np.ndarray
    residual: np.ndarray
    tree_count: np.ndarray
    valid: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("oob_prediction", "residual", "tree_count", "valid"):
            getattr(self, name).setflags(write=False)

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    def valid_residuals(self) -> np.ndarray:
        return self.residual[self.valid]


def _as_training_arrays(X, y=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    if y is None:
        return X
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError("y must be 1-d with one entry per row of X")
    if not np.isfinite(y).all():
        raise ValueError("y contains non-finite values")
    return X, y


def _as_query(x, p):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != p:
        raise ValueError(f"query point has {x.shape[0]} coordinates, expected {p}")
    return x


def _forest_key(seed: int) -> int:
    return mix64((seed + GOLDEN) & MASK64)


def _bag_counts(tree_key: int, n: int, a_n: int, mode: str) -> np.ndarray:
    bag_key = derive_key(tree_key, 0)
    u = stream_block(bag_key, a_n)
    if mode == BOOTSTRAP:
        idx = mul_shift_vec(u, n).astype(np.int64)
        return np.bincount(idx, minlength=n).astype(np.int32)
    # subsample: partial Fisher-Yates, first a_n of a permutation of range(n)
    draws = mul_shift_vec(u, np.arange(n, n - a_n, -1, dtype=np.uint64))
    pool = np.arange(n, dtype=np.int64)
    for j in range(a_n):
        k = j + int(draws[j])
        pool[j], pool[k] = pool[k], pool[j]
    counts = np.zeros(n, dtype=np.int32)
    counts[pool[:a_n]] = 1
    return counts


def _draw_features(stream: SplitMix, p: int, mtry: int) -> np.ndarray:
    """mtry distinct feature indices, ascending (ties break toward low ids)."""
    pool = list(range(p))
    for j in range(mtry):
        k = j + stream.next_below(p - j)
        pool[j], pool[k] = pool[k], pool[j]
    return np.array(sorted(pool[:mtry]), dtype=np.int32)


class _TreeBuilder:
    """Shared growth driver; numeric work is delegated to the backend."""

    def __init__(self, X, y, part, mtry, min_node_size, max_terminal_nodes, stream):
        self.X = X
        self.y = y
        self.part = part
        self.mtry = mtry
        self.min_node_size = min_node_size
        self.max_terminal_nodes = max_terminal_nodes
        self.stream = stream
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []
        self.node_start = []
        self.node_end = []
        self._empty_features = np.empty(0, dtype=np.int32)

    def _new_node(self, start, end):
        nid = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.node_start.append(start)
        self.node_end.append(end)
        return nid

    def _evaluate(self, nid):
        """Node mean plus its best split, or None when the node stays a leaf."""
        start, end = self.node_start[nid], self.node_end[nid]
        m = end - start
        feats = self._empty_features
        if m >= 2 * self.min_node_size:
            feats = _draw_features(self.stream, self.X.shape[1], self.mtry)
        s, _ss, lo, hi, f, thr, nl, proxy = _K.eval_node(
            self.X, self.y, self.part, start, end, feats
        )
        self.value[nid] = s / m
        if f < 0 or lo == hi:
            return None
        reduction = (proxy - s * s / m) / m
        if not reduction > 0.0:
            return None
        return f, thr, nl, reduction

    def _expand(self, nid, split):
        f, thr, nl, _reduction = split
        start, end = self.node_start[nid], self.node_end[nid]
        got = _K.partition_stable(self.X, self.part, start, end, f, thr)
        if got != nl:
            raise AssertionError("partition disagrees with split scan")
        self.feature[nid] = f
        self.threshold[nid] = thr
        left_id = self._new_node(start, start + nl)
        right_id = self._new_node(start + nl, end)
        self.left[nid] = left_id
        self.right[nid] = right_id
        return left_id, right_id

    def grow(self):
        root = self._new_node(0, len(self.part))
        if self.max_terminal_nodes is None:
            self._grow_depth_first(root)
        else:
            self._grow_best_first(root)
        return self._finish()

    def _grow_depth_first(self, root):
        stack = [root]
        while stack:
            nid = stack.pop()
            split = self._evaluate(nid)
            if split is None:
                continue
            left_id, right_id = self._expand(nid, split)
            stack.append(right_id)
            stack.append(left_id)

    def _grow_best_first(self, root):
        # expand the pending node with the largest variance reduction until
        # the leaf budget is exhausted; insertion order breaks exact ties
        heap = []
        seq = 0
        split = self._evaluate(root)
        if split is not None:
            heapq.heappush(heap, (-split[3], seq, root, split))
            seq += 1
        leaves = 1
        while heap and leaves < self.max_terminal_nodes:
            _, _, nid, split = heapq.heappop(heap)
            left_id, right_id = self._expand(nid, split)
            leaves += 1
            for child in (left_id, right_id):
                child_split = self._evaluate(child)
                if child_split is not None:
                    heapq.heappush(heap, (-child_split[3], seq, child, child_split))
                    seq += 1
        # anything left on the heap stays a leaf; means are already set

    def _finish(self):
        return Tree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
            node_start=np.array(self.node_start, dtype=np.int64),
            node_end=np.array(self.node_end, dtype=np.int64),
            samples=self.part,
            n_features=self.X.shape[1],
        )


def build_tree(data, config: ForestConfig, bag: BagMask, rng_stream) -> Tree:
    """Grow one CART tree on the bagged rows of (X, y).

    rng_stream may be a SplitMix stream or an integer seed for one.
    """
    X, y = _as_training_arrays(*data)
    n, p = X.shape
    cfg = config.resolved(n, p)
    if bag.counts.shape[0] != n:
        raise ValueError("bag length does not match data")
    if int(bag.counts.sum()) == 0:
        raise ValueError("empty bag")
    if isinstance(rng_stream, int):
        rng_stream = SplitMix(_forest_key(rng_stream))
    part = np.repeat(np.arange(n, dtype=np.int32), bag.counts)
    builder = _TreeBuilder(
        X, y, part, cfg.mtry, cfg.min_node_size, cfg.max_terminal_nodes, rng_stream
    )
    return builder.grow()


def build_forest(data, config: ForestConfig) -> Forest:
    """Train a forest of config.num_trees bagged trees.

    Each tree draws its bag and its node-level feature subsets from streams
    derived from (seed, tree index), so the result does not depend on build
    order or thread count.
    """
    X, y = _as_training_arrays(*data)
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least 2 training rows")
    if p < 1:
        raise ValueError("need at least 1 feature")
    cfg = config.resolved(n, p)
    forest_key = _forest_key(cfg.seed)
    trees = []
    masks = []
    for t in range(cfg.num_trees):
        tree_key = derive_key(forest_key, t)
        counts = _bag_counts(tree_key, n, cfg.resample_count, cfg.resample_mode)
        mask = BagMask(counts, cfg.resample_mode, cfg.resample_count)
        part = np.repeat(np.arange(n, dtype=np.int32), counts)
        builder = _TreeBuilder(
            X, y, part, cfg.mtry, cfg.min_node_size, cfg.max_terminal_nodes,
            SplitMix(derive_key(tree_key, 1)),
        )
        trees.append(builder.grow())
        masks.append(mask)
    return Forest(config=cfg, trees=tuple(trees), bag_masks=tuple(masks), n=n, p=p)


def predict_tree(tree: Tree, x) -> float:
    """Leaf mean of the leaf containing x (x on the boundary goes left)."""
    x = _as_query(x, tree.n_features)
    nid = 0
    feature, threshold = tree.feature, tree.threshold
    while feature[nid] >= 0:
        if x[feature[nid]] <= threshold[nid]:
            nid = tree.left[nid]
        else:
            nid = tree.right[nid]
    return float(tree.value[nid])


def _tree_predict_batch(tree: Tree, X) -> np.ndarray:
    return _K.predict_batch(
        tree.feature, tree.threshold, tree.left, tree.right, tree.value, X
    )


def predict_forest(forest: Forest, x) -> float:
    """Arithmetic mean of all tree predictions at x."""
    x = _as_query(x, forest.p)
    acc = 0.0
    for tree in forest.trees:
        acc += predict_tree(tree, x)
    return acc / forest.num_trees


def predict_forest_batch(forest: Forest, X) -> np.ndarray:
    """predict_forest for every row of X (bit-identical to the scalar path)."""
    X = _as_training_arrays(X)
    if X.shape[1] != forest.p:
        raise ValueError(f"expected {forest.p} features, got {X.shape[1]}")
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for tree in forest.trees:
        acc += _tree_predict_batch(tree, X)
    return acc / forest.num_trees


def predict_oob(forest: Forest, data, i: int):
    """OOB prediction for training row i: (prediction or None, Z_i).

    Averages exactly the trees whose bag excluded row i; when every tree
    saw the row there is no OOB prediction and (None, 0) is returned.
    """
    X, _y = _as_training_arrays(*data)
    if not 0 <= i < forest.n:
        raise ValueError(f"row index {i} out of range")
    x = X[i]
    acc = 0.0
    z = 0
    for tree, mask in zip(forest.trees, forest.bag_masks):
        if mask.counts[i] == 0:
            acc += predict_tree(tree, x)
            z += 1
    if z == 0:
        return None, 0
    return acc / z, z


def oob_predictions(forest: Forest, X) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized OOB predictions (NaN where uncovered) and tree counts."""
    X = _as_training_arrays(X)
    n = X.shape[0]
    acc = np.zeros(n, dtype=np.float64)
    z = np.zeros(n, dtype=np.int64)
    for tree, mask in zip(forest.trees, forest.bag_masks):
        out = mask.oob()
        if not out.any():
            continue
        preds = _tree_predict_batch(tree, X)
        acc += np.where(out, preds, 0.0)
        z += out
    pred = np.full(n, np.nan)
    covered = z > 0
    pred[covered] = acc[covered] / z[covered]
    return pred, z


def oob_residuals(forest: Forest, data) -> OobResiduals:
    """OOB residuals y_i - m_oob(X_i) over the training set."""
    X, y = _as_training_arrays(*data)
    if X.shape != (forest.n, forest.p):
        raise ValueError("data does not match the forest's training dimensions")
    pred, z = oob_predictions(forest, X)
    valid = z > 0
    if not valid.any():
        raise ValueError("no out-of-bag coverage; increase M")
    residual = np.where(valid, y - pred, np.nan)
    return OobResiduals(
        oob_prediction=pred, residual=residual, tree_count=z, valid=valid
    )


def oob_exclusion_probability(n: int, a_n: int, mode: str) -> float:
    """Probability that a fixed observation is out of bag for one tree."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= a_n <= n:
        raise ValueError(f"a_n must be in [1, {n}], got {a_n}")
    if mode == SUBSAMPLE:
        return 1.0 - a_n / n
    if mode == BOOTSTRAP:
        return (1.0 - 1.0 / n) ** n
    raise ValueError(f"unknown resample mode {mode!r}")


def leaf_weights(forest: Forest, x) -> np.ndarray:
    """Co-membership weights of the training rows for a query point.

    w_k averages, over trees, the share of x's leaf occupied by row k
    (bootstrap multiplicities count); each tree's weights sum to 1, so the
    result is a probability vector over the n training rows.
    """
    x = _as_query(x, forest.p)
    xq = np.ascontiguousarray(x.reshape(1, -1))
    w = np.zeros(forest.n, dtype=np.float64)
    for tree in forest.trees:
        leaf = int(
            _K.leaf_assign(tree.feature, tree.threshold, tree.left, tree.right, xq)[0]
        )
        members = tree.leaf_members(leaf)
        counts = np.bincount(members, minlength=forest.n)
        w += counts / len(members)
    return w / forest.num_trees


def forest_to_dict(forest: Forest) -> dict:
    """Versioned JSON-ready document for a trained forest."""
    cfg = forest.config
    trees = []
    for tree in forest.trees:
        nodes = []
        for nid in range(tree.n_nodes):
            if tree.feature[nid] >= 0:
                nodes.append(
                    {
                        "feature": int(tree.feature[nid]),
                        "threshold": float(tree.threshold[nid]),
                        "left": int(tree.left[nid]),
                        "right": int(tree.right[nid]),
                    }
                )
            else:
                nodes.append(
                    {
                        "value": float(tree.value[nid]),
                        "samples": [int(s) for s in tree.leaf_members(nid)],
                    }
                )
        trees.append({"nodes": nodes})
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "config": {
            "num_trees": cfg.num_trees,
            "mtry": cfg.mtry,
            "resample_count": cfg.resample_count,
            "resample_mode": cfg.resample_mode,
            "min_node_size": cfg.min_node_size,
            "max_terminal_nodes": cfg.max_terminal_nodes,
            "seed": cfg.seed,
        },
        "n": forest.n,
        "p": forest.p,
        "trees": trees,
        "bag_masks": [[int(c) for c in m.counts] for m in forest.bag_masks],
    }


def forest_from_dict(doc: dict) -> Forest:
    """Rebuild a forest from its JSON document."""
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    cfg = ForestConfig(**doc["config"])
    n, p = int(doc["n"]), int(doc["p"])
    trees = []
    masks = []
    for tree_doc, counts in zip(doc["trees"], doc["bag_masks"]):
        trees.append(_tree_from_nodes(tree_doc["nodes"], p))
        masks.append(
            BagMask(
                np.array(counts, dtype=np.int32),
                cfg.resample_mode,
                cfg.resample_count,
            )
        )
    return Forest(config=cfg, trees=tuple(trees), bag_masks=tuple(masks), n=n, p=p)


def _tree_from_nodes(nodes: list, p: int) -> Tree:
    k = len(nodes)
    feature = np.full(k, -1, dtype=np.int32)
    threshold = np.zeros(k, dtype=np.float64)
    left = np.full(k, -1, dtype=np.int32)
    right = np.full(k, -1, dtype=np.int32)
    value = np.zeros(k, dtype=np.float64)
    leaf_samples = {}
    for nid, node in enumerate(nodes):
        if "feature" in node:
            feature[nid] = node["feature"]
            threshold[nid] = node["threshold"]
            left[nid] = node["left"]
            right[nid] = node["right"]
        else:
            value[nid] = node["value"]
            leaf_samples[nid] = node["samples"]
    # leaves in left-to-right order own consecutive segments of the
    # partition array, same layout the builder produces
    node_start = np.zeros(k, dtype=np.int64)
    node_end = np.zeros(k, dtype=np.int64)
    chunks = []
    cursor = 0
    stack = [(0, False)]
    while stack:
        nid, finalize = stack.pop()
        if finalize:
            node_end[nid] = cursor
            continue
        node_start[nid] = cursor
        if feature[nid] >= 0:
            stack.append((nid, True))
            stack.append((int(right[nid]), False))
            stack.append((int(left[nid]), False))
        else:
            chunk = np.array(leaf_samples[nid], dtype=np.int32)
            chunks.append(chunk)
            cursor += len(chunk)
            node_end[nid] = cursor
    samples = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int32)
    return Tree(
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
        value=value,
        node_start=node_start,
        node_end=node_end,
        samples=samples,
        n_features=p,
    )


def save_forest(forest: Forest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(forest), fh)
        fh.write("\n")


def load_forest(path) -> Forest:
    with open(path, encoding="utf-8") as fh:
        return forest_from_dict(json.load(fh))
