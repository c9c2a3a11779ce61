"""Generic binary-forest machinery: candidate splits, growth, bagging, inference.

Quality functions are pluggable. A selector decides, per node, which quality
to score candidates with; scoring is vectorized across the node's candidate
set. Split functions always threshold a single feature column, so inference
needs nothing beyond the feature matrix the forest was trained on.
"""

from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from klrf.model import DataError


@dataclass(frozen=True)
class SplitFunction:
    gamma: int  # feature index
    tau: float  # threshold; left child takes x[gamma] < tau


@dataclass
class TreeNode:
    split: SplitFunction | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    class_hist: np.ndarray | None = None
    mean_kinematic: np.ndarray | None = None
    count: int = 0

    @property
    def is_leaf(self):
        return self.split is None


@dataclass
class Forest:
    trees: list
    label_names: list
    config_dict: dict
    bootstrap_membership: np.ndarray  # (num_trees, N) bool, training artifact
    feature_dim: int
    kinematic_dim: int
    feature_space: str = "appearance"
    mode: str = "baseline"
    quality_counts: dict = field(default_factory=dict)

    @property
    def n_classes(self):
        return len(self.label_names)


def generate_candidates(X, idx, count, rng):
    """Random (gamma, tau) pairs: gamma uniform over features, tau uniform
    within the node's empirical range of that feature.

    Returns (gammas, taus, feature_submatrix). One-sided candidates are
    allowed; they score as no-gain downstream.
    """
    d = X.shape[1]
    gammas = rng.integers(0, d, size=count)
    sub = X[np.ix_(idx, gammas)]
    lows = sub.min(axis=0)
    highs = sub.max(axis=0)
    taus = rng.uniform(lows, highs)
    return gammas, taus, sub


def partition(X, idx, split):
    """Split node sample indices by x[gamma] < tau."""
    mask = X[idx, split.gamma] < split.tau
    return idx[mask], idx[~mask]


def _make_leaf(y, kin, idx, n_classes):
    hist = np.bincount(y[idx], minlength=n_classes).astype(float)
    hist /= hist.sum()
    if kin is not None and kin.shape[1] > 0:
        mean_kin = kin[idx].mean(axis=0)
    else:
        mean_kin = np.empty(0)
    return TreeNode(class_hist=hist, mean_kinematic=mean_kin, count=len(idx))


def grow_tree(X, y, kin, idx, selector, rng, config, n_classes, counts=None):
    """Recursively grow one tree over the node sample indices `idx`.

    At each node the selector yields an ordered list of (choice, score_fn)
    stages; the first stage whose best two-sided candidate improves on the
    all-left reference split is accepted. A node with no improving stage
    becomes a leaf, as do single-class and size-limited nodes.
    """
    n = len(idx)
    if n <= config.min_samples_leaf or len(np.unique(y[idx])) < 2:
        return _make_leaf(y, kin, idx, n_classes)

    # Per-node selection randomness is drawn here, unconditionally, so every
    # selector consumes the same stream and tree shapes stay comparable
    # across selector choices under a shared seed.
    zeta = rng.uniform()
    qv_draw = rng.uniform()
    stages = selector(idx, zeta, qv_draw)

    gammas, taus, sub = generate_candidates(X, idx, config.candidates_per_node, rng)
    masks = sub < taus  # (n, C) True -> left child
    left_counts = masks.sum(axis=0)
    valid = (left_counts > 0) & (left_counts < n)

    best = None
    if valid.any():
        ref_mask = np.ones((n, 1), dtype=bool)
        for choice, score_fn in stages:
            scores = np.where(valid, score_fn(idx, masks), -np.inf)
            c = int(np.argmax(scores))
            gain = scores[c] - score_fn(idx, ref_mask)[0]
            if gain > 0:
                best = (choice, c)
                break
    if best is None:
        return _make_leaf(y, kin, idx, n_classes)

    choice, c = best
    if counts is not None:
        counts[choice] = counts.get(choice, 0) + 1
    split = SplitFunction(int(gammas[c]), float(taus[c]))
    left_idx = idx[masks[:, c]]
    right_idx = idx[~masks[:, c]]
    return TreeNode(
        split=split,
        left=grow_tree(X, y, kin, left_idx, selector, rng, config, n_classes, counts),
        right=grow_tree(X, y, kin, right_idx, selector, rng, config, n_classes, counts),
        count=n,
    )


def _train_one_tree(args):
    X, y, kin, selector_factory, config, n_classes, stream, t = args
    rng = np.random.default_rng([config.seed, stream, t])
    N = X.shape[0]
    if config.full_bag:
        bag = np.arange(N)
    else:
        bag = rng.integers(0, N, size=N)
    membership = np.zeros(N, dtype=bool)
    membership[bag] = True
    counts = {}
    selector = selector_factory()
    root = grow_tree(X, y, kin, bag, selector, rng, config, n_classes, counts)
    return root, membership, counts


def train_forest(
    X, y, kin, selector_factory, config, label_names,
    stream=0, feature_space="appearance", mode="baseline",
):
    """Bagged forest: each tree is grown on a bootstrap resample drawn from a
    private RNG stream keyed by (seed, stream, tree index), so results do not
    depend on the parallel schedule. Bootstrap membership is retained for OOB.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[0] < 2:
        raise DataError("need at least 2 training samples")
    if len(np.unique(y)) < 2:
        raise DataError("need at least 2 classes")
    n_classes = len(label_names)
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 10000 + 10 * X.shape[0]))

    jobs = [
        (X, y, kin, selector_factory, config, n_classes, stream, t)
        for t in range(config.num_trees)
    ]
    if config.n_threads and config.n_threads > 1:
        with ThreadPoolExecutor(max_workers=config.n_threads) as pool:
            results = list(pool.map(_train_one_tree, jobs))
    else:
        results = [_train_one_tree(j) for j in jobs]

    trees = [r[0] for r in results]
    membership = np.stack([r[1] for r in results])
    total_counts = {}
    for _, _, c in results:
        for k, v in c.items():
            total_counts[k] = total_counts.get(k, 0) + v
    return Forest(
        trees=trees,
        label_names=list(label_names),
        config_dict=config.to_dict(),
        bootstrap_membership=membership,
        feature_dim=X.shape[1],
        kinematic_dim=0 if kin is None else kin.shape[1],
        feature_space=feature_space,
        mode=mode,
        quality_counts=total_counts,
    )


def apply_tree(root, X):
    """Route every row of X to its leaf; returns (hists, kinematics)."""
    n = X.shape[0]
    out_hist = None
    out_kin = None
    stack = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if node.is_leaf:
            if out_hist is None:
                out_hist = np.empty((n, node.class_hist.shape[0]))
                out_kin = np.empty((n, node.mean_kinematic.shape[0]))
            out_hist[idx] = node.class_hist
            out_kin[idx] = node.mean_kinematic
        else:
            mask = X[idx, node.split.gamma] < node.split.tau
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return out_hist, out_kin


def predict_batch(forest, X):
    """Average of per-tree leaf statistics, uniformly over trees."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.feature_dim:
        raise DataError(
            f"feature dimension {X.shape[-1]} != trained dimension {forest.feature_dim}"
        )
    hist_sum = np.zeros((X.shape[0], forest.n_classes))
    kin_sum = None
    for tree in forest.trees:
        h, k = apply_tree(tree, X)
        hist_sum += h
        if k.shape[1] > 0:
            kin_sum = k if kin_sum is None else kin_sum + k
    probs = hist_sum / len(forest.trees)
    khat = kin_sum / len(forest.trees) if kin_sum is not None else np.empty((X.shape[0], 0))
    return probs, khat


def predict(forest, appearance):
    """Class distribution and leaf-kinematic estimate for one feature vector."""
    x = np.asarray(appearance, dtype=float)
    if x.ndim != 1 or x.shape[0] != forest.feature_dim:
        raise DataError(
            f"feature dimension {x.shape} != trained dimension {forest.feature_dim}"
        )
    probs, khat = predict_batch(forest, x[None, :])
    return probs[0], khat[0]


def oob_posteriors(forest, X):
    """Per-sample average over trees whose bootstrap excluded that sample.

    Returns (posteriors, oob_tree_counts); rows with count 0 carry NaNs.
    X must be the training feature matrix the membership bitmaps refer to.
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    if forest.bootstrap_membership.shape[1] != N:
        raise DataError("OOB requires the original training matrix")
    acc = np.zeros((N, forest.n_classes))
    counts = np.zeros(N)
    for tree, member in zip(forest.trees, forest.bootstrap_membership):
        out = ~member
        if not out.any():
            continue
        h, _ = apply_tree(tree, X[out])
        acc[out] += h
        counts[out] += 1
    with np.errstate(invalid="ignore"):
        post = acc / counts[:, None]
    post[counts == 0] = np.nan
    return post, counts


def oob_posterior(forest, X, sample_index):
    """OOB class distribution for one training sample, or None."""
    post, counts = oob_posteriors(forest, X)
    if counts[sample_index] == 0:
        return None
    return post[sample_index]
