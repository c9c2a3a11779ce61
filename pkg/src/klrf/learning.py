"""Privileged-information split criteria and the full training pipeline.

Quality functions:
  Qs  groups samples by how useful the privileged cue is (usefulness variance)
  Qc  class purity of children (Shannon entropy on class histograms)
  Qk  class purity on gap-closing weighted histograms
  Qv  compactness of children in kinematic space (cross-view mode)

Each function exists twice: a scalar form implementing the stated contract,
and a vectorized form scoring a whole candidate set at once during growth.
The two are cross-checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from klrf.features import assemble_features, augment, _temporal_shift
from klrf.forest import Forest, oob_posteriors, predict_batch, train_forest
from klrf.model import DataError, KLRFConfig, build_label_map, validate_dataset
from klrf.numeric import gaussian_kernel, least_squares_min_norm, shannon_term, variance_trace

# Quality choices, named after the split-criterion that fired.
SWITCH = "Qs"
APPEARANCE = "Qc"
KINEMATIC = "Qk"
VIEW = "Qv"

# RNG stream tags: keep forests and augmentation on disjoint streams.
STREAM_MAIN = 0
STREAM_REF_APPEARANCE = 1
STREAM_REF_KINEMATIC = 2
STREAM_AUGMENT = 3

KCF_SIGMA_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# scalar quality functions (contract form)

def q_switch(u_left, u_right):
    """Compactness of usefulness scores in the children; in (0, 1]."""
    u_left = np.asarray(u_left, dtype=float)
    u_right = np.asarray(u_right, dtype=float)
    n = u_left.size + u_right.size
    acc = 0.0
    for u in (u_left, u_right):
        if u.size > 0:
            acc += (u.size / n) * float(u.var())
    return 1.0 / (1.0 + acc)


def q_appearance(y_left, y_right, n_classes):
    """Count-weighted child negative entropies; <= 0, maximal for pure children."""
    total = 0.0
    for y in (np.asarray(y_left), np.asarray(y_right)):
        if y.size > 0:
            hist = np.bincount(y, minlength=n_classes)
            total += y.size * shannon_term(hist)
    return total


def q_kinematic(y_left, y_right, w_left, w_right, n_classes):
    """Negative entropy of gap-weighted class histograms; <= 0."""
    w_left = np.asarray(w_left, dtype=float)
    w_right = np.asarray(w_right, dtype=float)
    if len(w_left) != len(np.asarray(y_left)) or len(w_right) != len(np.asarray(y_right)):
        raise DataError("weights misaligned with node samples")
    W = w_left.sum() + w_right.sum()
    total = 0.0
    for y, w in ((np.asarray(y_left), w_left), (np.asarray(y_right), w_right)):
        for c in range(n_classes):
            nw = w[y == c].sum()
            if nw > 0:
                total += nw * np.log(nw / W)
    return float(total)


def q_view(k_left, k_right):
    """Compactness of children in kinematic feature space; in (0, 1]."""
    k_left = np.asarray(k_left, dtype=float)
    k_right = np.asarray(k_right, dtype=float)
    n = (k_left.shape[0] if k_left.size else 0) + (k_right.shape[0] if k_right.size else 0)
    acc = 0.0
    for k in (k_left, k_right):
        if k.size > 0:
            acc += (k.shape[0] / n) * variance_trace(k)
    return 1.0 / (1.0 + acc)


def usefulness_score(kinematic_posterior, appearance_posterior, label_index):
    """F_K posterior minus F_A posterior at the ground-truth class; in [-1, 1]."""
    return float(kinematic_posterior[label_index] - appearance_posterior[label_index])


def gap_weights(appearance_posteriors, kinematic_posteriors, eps=1e-6, clamp=True):
    """Per-sample weights closing the gap between the node's appearance-based
    and kinematic-based class distributions.

    Columns of the system matrix are the samples' appearance posteriors; the
    target is the node-mean kinematic posterior. The minimum-norm solution is
    clamped below at eps so the weighted-entropy criterion stays defined.
    """
    app = np.asarray(appearance_posteriors, dtype=float)
    kin = np.asarray(kinematic_posteriors, dtype=float)
    A = app.T  # (|Y|, |D|)
    b = kin.mean(axis=0)
    w = least_squares_min_norm(A, b)
    if clamp:
        w = np.maximum(w, eps)
    return w


# ---------------------------------------------------------------------------
# vectorized forms used during tree growth

def _entropy_cells(H, totals):
    """sum_y h log(h / t) per row, with 0 log 0 := 0."""
    out = np.zeros(H.shape[0])
    pos = totals > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(H > 0, H * (np.log(H) - np.log(totals)[:, None]), 0.0)
    out[pos] = term[pos].sum(axis=1)
    return out


def q_appearance_batch(onehot, masks):
    left = masks.T.astype(float) @ onehot  # (C, Y)
    right = onehot.sum(axis=0)[None, :] - left
    return _entropy_cells(left, left.sum(axis=1)) + _entropy_cells(right, right.sum(axis=1))


def q_kinematic_batch(onehot, w, masks):
    """Growth form of the weighted-histogram criterion.

    The literal whole-node normalization (see q_kinematic) is a joint
    entropy, whose gain over the all-left reference split is never positive,
    so it cannot grow a tree. Growth therefore normalizes per child (the
    weighted analogue of the appearance criterion); at fixed child masses
    the two rank candidates identically.
    """
    wh = w[:, None] * onehot
    left = masks.T.astype(float) @ wh
    right = wh.sum(axis=0)[None, :] - left
    return _entropy_cells(left, left.sum(axis=1)) + _entropy_cells(right, right.sum(axis=1))


def _child_variance_sum(values, sq_values, masks):
    """Per-candidate (n_m/n) * variance-trace terms for both children."""
    n = masks.shape[0]
    nl = masks.sum(axis=0).astype(float)
    nr = n - nl
    s1l = masks.T.astype(float) @ values
    s2l = masks.T.astype(float) @ sq_values
    s1r = values.sum(axis=0)[None, :] - s1l
    s2r = sq_values.sum(axis=0)[None, :] - s2l
    acc = np.zeros(masks.shape[1])
    for s1, s2, nm in ((s1l, s2l, nl), (s1r, s2r, nr)):
        pos = nm > 0
        tr = np.zeros_like(acc)
        tr[pos] = s2[pos].sum(axis=1) / nm[pos] - (s1[pos] ** 2).sum(axis=1) / nm[pos] ** 2
        acc += (nm / n) * np.clip(tr, 0.0, None)
    return acc


def q_switch_batch(u, masks):
    u = np.asarray(u, dtype=float)
    return 1.0 / (1.0 + _child_variance_sum(u[:, None], u[:, None] ** 2, masks))


def q_view_batch(K, masks):
    return 1.0 / (1.0 + _child_variance_sum(K, K * K, masks))


# ---------------------------------------------------------------------------
# per-node quality selection

@dataclass
class NodeContext:
    n_samples: int
    total: int
    delta: float
    zeta: float
    qv_draw: float = 1.0
    cross_view: bool = False


def select_quality(ctx, config):
    """Primary quality choice for one node, per the switching rules."""
    if ctx.cross_view and ctx.qv_draw < config.qv_switch_prob:
        return VIEW
    if ctx.n_samples > config.eta_fraction * ctx.total:
        return SWITCH
    return APPEARANCE if ctx.zeta > ctx.delta else KINEMATIC


class BaselineSelector:
    """Plain classification forest: Qc everywhere."""

    def __init__(self, y, n_classes):
        self.onehot = np.eye(n_classes)[y]

    def __call__(self, idx, zeta, qv_draw):
        oh = self.onehot
        return [(APPEARANCE, lambda _, masks: q_appearance_batch(oh[idx], masks))]


class KLRFSelector:
    """Quality-function switching over Qv / Qs / (Qc | Qk).

    Stages are ordered: if the primary choice yields no candidate with
    positive gain the next stage is tried, ending with the classification
    stage. Without this fallback a node whose usefulness scores are already
    compact would become a large impure leaf, since Qs could never improve
    on its reference split.
    """

    def __init__(self, y, n_classes, usefulness, app_post, kin_post, K, total, config):
        self.onehot = np.eye(n_classes)[y]
        self.u = np.asarray(usefulness, dtype=float)
        self.app_post = app_post
        self.kin_post = kin_post
        self.K = K
        self.total = total
        self.config = config

    def _classification_stage(self, idx, zeta):
        delta = float(np.mean(self.u[idx] > 0))
        if zeta > delta:
            return (APPEARANCE, lambda _, masks: q_appearance_batch(self.onehot[idx], masks))
        cache = {}

        def qk(_, masks):
            if "w" not in cache:
                cache["w"] = gap_weights(
                    self.app_post[idx], self.kin_post[idx],
                    eps=self.config.weight_clamp_epsilon,
                )
            return q_kinematic_batch(self.onehot[idx], cache["w"], masks)

        return (KINEMATIC, qk)

    def __call__(self, idx, zeta, qv_draw):
        cfg = self.config
        stages = []
        if cfg.cross_view_mode and qv_draw < cfg.qv_switch_prob:
            stages.append((VIEW, lambda _, masks: q_view_batch(self.K[idx], masks)))
        if len(idx) > cfg.eta_fraction * self.total:
            u = self.u
            stages.append((SWITCH, lambda _, masks: q_switch_batch(u[idx], masks)))
        stages.append(self._classification_stage(idx, zeta))
        return stages


# ---------------------------------------------------------------------------
# training pipeline

@dataclass
class KLRFModel:
    forest: Forest
    label_names: list
    config: KLRFConfig
    f_appearance: Forest | None = None
    f_kinematic: Forest | None = None
    usefulness: np.ndarray | None = None
    sample_labels: np.ndarray | None = None
    sample_groups: list | None = None


def featurize(sequences, config, label_map):
    """Samples plus stacked feature matrices for a list of sequences."""
    samples = [assemble_features(s, config, label_map) for s in sequences]
    X = np.stack([s.appearance for s in samples])
    y = np.array([s.label_index for s in samples])
    kin_dims = {s.kinematic.shape[0] for s in samples}
    if kin_dims == {0}:
        K = None
    elif 0 in kin_dims or len(kin_dims) > 1:
        raise DataError("inconsistent kinematic dimensions across sequences")
    else:
        K = np.stack([s.kinematic for s in samples])
    return samples, X, y, K


def pretrain_reference_forests(X, K, y, config, label_names):
    """Reference forests F_A (appearance) and F_K (kinematics), Qc-only,
    trained with bootstrap membership retained for OOB posteriors."""
    if K is None or K.shape[1] == 0:
        raise DataError("reference forests need nonempty kinematic vectors")
    n_classes = len(label_names)
    ref_config = config
    if config.reference_trees is not None and config.reference_trees != config.num_trees:
        ref_config = KLRFConfig.from_dict(config.to_dict())
        ref_config.num_trees = config.reference_trees
        ref_config.n_threads = config.n_threads
    f_a = train_forest(
        X, y, None, lambda: BaselineSelector(y, n_classes), ref_config, label_names,
        stream=STREAM_REF_APPEARANCE, feature_space="appearance", mode="reference",
    )
    f_k = train_forest(
        K, y, None, lambda: BaselineSelector(y, n_classes), ref_config, label_names,
        stream=STREAM_REF_KINEMATIC, feature_space="kinematic", mode="reference",
    )
    return f_a, f_k


def compute_usefulness(samples, X, K, y, f_a, f_k):
    """Attach OOB posteriors (full-forest fallback) and usefulness scores."""
    post_a, counts_a = oob_posteriors(f_a, X)
    post_k, counts_k = oob_posteriors(f_k, K)
    full_a, _ = predict_batch(f_a, X)
    full_k, _ = predict_batch(f_k, K)
    post_a = np.where(counts_a[:, None] > 0, post_a, full_a)
    post_k = np.where(counts_k[:, None] > 0, post_k, full_k)
    u = post_k[np.arange(len(y)), y] - post_a[np.arange(len(y)), y]
    for i, s in enumerate(samples):
        s.appearance_posterior = post_a[i]
        s.kinematic_posterior = post_k[i]
        s.usefulness = float(u[i])
    return u, post_a, post_k


def _augmented_training_set(sequences, config):
    if not config.augment_training:
        return list(sequences)
    out = []
    for i, seq in enumerate(sequences):
        rng = np.random.default_rng([config.seed, STREAM_AUGMENT, i])
        out.append(seq)
        out.extend(augment(seq, config, rng))
    return out


def _check_dataset(sequences):
    report = validate_dataset(sequences)
    if report:
        raise DataError("invalid dataset: " + "; ".join(report))


def train_klrf(sequences, config):
    """Full KLRF pipeline: features (+ optional augmentation), reference
    forests, usefulness scoring, then the main forest grown with the
    switching quality selector. The main forest thresholds appearance
    features only, so it predicts from A(V) alone."""
    _check_dataset(sequences)
    label_map = build_label_map(sequences)
    label_names = sorted(label_map)
    train_seqs = _augmented_training_set(sequences, config)
    if not all(s.has_kinematics for s in train_seqs):
        raise DataError("KLRF training requires planes and skeletons on all sequences")
    samples, X, y, K = featurize(train_seqs, config, label_map)
    if K is None:
        raise DataError("KLRF training requires kinematic features")
    f_a, f_k = pretrain_reference_forests(X, K, y, config, label_names)
    u, post_a, post_k = compute_usefulness(samples, X, K, y, f_a, f_k)
    n_classes = len(label_names)
    forest = train_forest(
        X, y, K,
        lambda: KLRFSelector(y, n_classes, u, post_a, post_k, K, len(y), config),
        config, label_names, stream=STREAM_MAIN, feature_space="appearance", mode="klrf",
    )
    return KLRFModel(
        forest=forest, label_names=label_names, config=config,
        f_appearance=f_a, f_kinematic=f_k, usefulness=u,
        sample_labels=y, sample_groups=[s.augmentation_group for s in samples],
    )


def train_baseline(sequences, config):
    """Plain bagged classification forest (Qc only) on the same features."""
    _check_dataset(sequences)
    label_map = build_label_map(sequences)
    label_names = sorted(label_map)
    train_seqs = _augmented_training_set(sequences, config)
    _, X, y, K = featurize(train_seqs, config, label_map)
    n_classes = len(label_names)
    forest = train_forest(
        X, y, K, lambda: BaselineSelector(y, n_classes), config, label_names,
        stream=STREAM_MAIN, feature_space="appearance", mode="baseline",
    )
    return KLRFModel(forest=forest, label_names=label_names, config=config)


# ---------------------------------------------------------------------------
# inference-time kinematic consistency filter

def kcf(query_index, group_probs, group_khats, bandwidth="median"):
    """Kernel-weighted average of class distributions over an augmentation
    group, weighted by similarity of leaf-predicted kinematic vectors.

    bandwidth 'median' uses the median pairwise distance within the group
    (floored at 1e-9); a positive real fixes sigma directly.
    """
    probs = np.asarray(group_probs, dtype=float)
    khats = np.asarray(group_khats, dtype=float)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise DataError("KCF requires a nonempty group")
    G = probs.shape[0]
    if G == 1:
        return probs[0]
    dists = np.linalg.norm(khats - khats[query_index], axis=1)
    if bandwidth == "median":
        iu, ju = np.triu_indices(G, k=1)
        pair = np.linalg.norm(khats[iu] - khats[ju], axis=1)
        sigma = max(float(np.median(pair)), KCF_SIGMA_FLOOR)
    else:
        sigma = float(bandwidth)
    weights = np.array([gaussian_kernel(d, sigma) for d in dists])
    out = weights @ probs / weights.sum()
    return out / out.sum()


def expand_with_temporal_offsets(sequences, n_offsets):
    """Temporal-offset variants of each sequence (offset 0 first), sharing the
    original's augmentation group. Needs only appearance data, so it is safe
    on privileged-free test sequences."""
    out = []
    for seq in sequences:
        out.append(seq)
        for o in range(1, min(n_offsets, max(seq.length, 1))):
            out.append(_temporal_shift(seq, o, f"o{o}"))
    return out


def evaluate(model, sequences, use_kcf=False):
    """Predict every sequence; with use_kcf, refine each prediction through
    its augmentation group. Returns (probs, khats) row-aligned to input."""
    label_map = {name: i for i, name in enumerate(model.label_names)}
    samples = [assemble_features(s, model.config, label_map=None) for s in sequences]
    X = np.stack([s.appearance for s in samples])
    probs, khats = predict_batch(model.forest, X)
    if not use_kcf:
        return probs, khats
    groups = {}
    for i, seq in enumerate(sequences):
        groups.setdefault(seq.augmentation_group, []).append(i)
    refined = probs.copy()
    for members in groups.values():
        members = np.asarray(members)
        for j, i in enumerate(members):
            refined[i] = kcf(
                j, probs[members], khats[members], bandwidth=model.config.kcf_bandwidth
            )
    return refined, khats
