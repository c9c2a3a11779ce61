"""Domain types shared by all modules: sequences, geometry, samples, config."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

UNIT_NORMAL_TOL = 1e-9
DISTRIBUTION_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class LayoutPlane:
    """Scene plane in Hessian normal form: {x : normal . x = offset}."""

    normal: np.ndarray
    offset: float
    label: str

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,):
            raise DataError(f"plane {self.label!r}: normal must be a 3-vector")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def is_unit(self):
        return abs(np.linalg.norm(self.normal) - 1.0) <= UNIT_NORMAL_TOL

    def signed_distance(self, point):
        return float(self.normal @ np.asarray(point, dtype=float) - self.offset)


@dataclass(frozen=True)
class SkeletonFrame:
    """One frame of P camera-space joints, 1-based timestamp index."""

    joints: np.ndarray  # (P, 3)
    t: int = 1

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=float)
        if j.ndim != 2 or j.shape[1] != 3:
            raise DataError("joints must be a (P, 3) array")
        object.__setattr__(self, "joints", j)

    @property
    def joint_count(self):
        return self.joints.shape[0]


@dataclass
class ActionSequence:
    """One labeled clip: skeleton frames, scene planes, appearance source.

    Planes and skeletons are privileged: present on training sequences and
    optional on test sequences. Appearance comes either from pre-extracted
    per-frame vectors or from raw depth frames (fallback descriptor).
    """

    id: str
    label: str
    frames: list = field(default_factory=list)  # list[SkeletonFrame]
    planes: list = field(default_factory=list)  # list[LayoutPlane]
    subject: str = ""
    view: str = ""
    appearance_frames: np.ndarray | None = None  # (T, d_a)
    depth_frames: list | None = None  # list of (H, W) arrays
    augmentation_group: str = ""

    def __post_init__(self):
        if not self.augmentation_group:
            self.augmentation_group = self.id
        if self.appearance_frames is not None:
            self.appearance_frames = np.asarray(self.appearance_frames, dtype=float)

    @property
    def length(self):
        if self.frames:
            return len(self.frames)
        if self.appearance_frames is not None:
            return self.appearance_frames.shape[0]
        if self.depth_frames is not None:
            return len(self.depth_frames)
        return 0

    @property
    def has_kinematics(self):
        return bool(self.frames) and bool(self.planes)


@dataclass
class Sample:
    """Per-sequence feature pair (appearance, kinematic) plus training state."""

    appearance: np.ndarray
    kinematic: np.ndarray  # size 0 on test samples
    label_index: int
    augmentation_group: str = ""
    sequence_id: str = ""
    usefulness: float | None = None
    appearance_posterior: np.ndarray | None = None
    kinematic_posterior: np.ndarray | None = None


def check_distribution(probs, tol=DISTRIBUTION_TOL):
    """Raise DataError unless probs is a valid class distribution."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1:
        raise DataError("class distribution must be a vector")
    if np.any(p < 0):
        raise DataError("class distribution has negative entries")
    if abs(p.sum() - 1.0) > tol:
        raise DataError(f"class distribution sums to {p.sum()}, not 1")
    return p


@dataclass
class AugmentationConfig:
    translations: int = 10
    rotations: int = 5
    rotation_max_deg: float = 60.0
    temporal_offsets: int = 10
    # When True, rotations/translations/offsets compose as a full product
    # instead of being applied independently.
    product_mode: bool = False


@dataclass
class KLRFConfig:
    """Every tunable of the training and inference pipeline."""

    num_trees: int = 500
    # Tree count for the two reference forests; None reuses num_trees. The
    # usefulness scores come from out-of-bag posteriors, where only ~37% of
    # trees vote per sample, so the references benefit from extra trees.
    reference_trees: int | None = 300
    eta_fraction: float = 0.1
    candidates_per_node: int = 100
    min_samples_leaf: int = 1
    qv_switch_prob: float = 0.5
    kcf_bandwidth: float | str = "median"
    weight_clamp_epsilon: float = 1e-6
    pyramid_levels: int = 3
    fourier_coeffs_per_segment: int = 4
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0
    cross_view_mode: bool = False
    # Apply geometric/temporal augmentation during training. Defaults off for
    # same-view desk-scale runs; cross-view training turns it on.
    augment_training: bool = False
    n_threads: int | None = None
    # Test hook: every tree sees the full training set (no bootstrap).
    full_bag: bool = False

    def __post_init__(self):
        if self.num_trees < 1:
            raise ConfigError("num_trees must be >= 1")
        if self.reference_trees is not None and self.reference_trees < 1:
            raise ConfigError("reference_trees must be >= 1 or None")
        if not (0.0 < self.eta_fraction < 1.0):
            raise ConfigError("eta_fraction must be in (0, 1)")
        if self.candidates_per_node < 1:
            raise ConfigError("candidates_per_node must be >= 1")
        if not (0.0 <= self.qv_switch_prob <= 1.0):
            raise ConfigError("qv_switch_prob must be in [0, 1]")
        if isinstance(self.kcf_bandwidth, str):
            if self.kcf_bandwidth != "median":
                raise ConfigError("kcf_bandwidth must be a positive real or 'median'")
        elif self.kcf_bandwidth <= 0:
            raise ConfigError("kcf_bandwidth must be positive")
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationConfig(**self.augmentation)

    def to_dict(self):
        d = dict(self.__dict__)
        d["augmentation"] = dict(self.augmentation.__dict__)
        # execution knob, not a model parameter: results are independent of
        # the parallel schedule, so serialized models must not embed it
        d.pop("n_threads", None)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        aug = d.pop("augmentation", None)
        cfg = cls(**d)
        if aug is not None:
            cfg.augmentation = AugmentationConfig(**aug)
        return cfg


def build_label_map(sequences):
    """Lexicographic class-name -> index map over the training set."""
    names = sorted({s.label for s in sequences})
    return {name: i for i, name in enumerate(names)}


def validate_dataset(sequences):
    """Check cross-sequence consistency; returns a list of violation strings.

    An empty report means the dataset is trainable.
    """
    if not sequences:
        raise DataError("empty dataset")
    report = []
    seen_ids = set()
    joint_count = None
    appearance_dim = None
    for seq in sequences:
        if seq.id in seen_ids:
            report.append(f"duplicate sequence id {seq.id!r}")
        seen_ids.add(seq.id)
        if seq.length < 1:
            report.append(f"sequence {seq.id!r}: empty (T = 0)")
        for frame in seq.frames:
            if joint_count is None:
                joint_count = frame.joint_count
            elif frame.joint_count != joint_count:
                report.append(
                    f"sequence {seq.id!r}: joint count {frame.joint_count} "
                    f"!= dataset joint count {joint_count}"
                )
                break
        if seq.frames and not all(np.all(np.isfinite(f.joints)) for f in seq.frames):
            report.append(f"sequence {seq.id!r}: non-finite joint coordinates")
        for plane in seq.planes:
            if not plane.is_unit():
                report.append(
                    f"sequence {seq.id!r}: plane {plane.label!r} normal is not unit length"
                )
        if seq.appearance_frames is not None:
            if seq.appearance_frames.shape[0] != seq.length and seq.frames:
                report.append(
                    f"sequence {seq.id!r}: appearance row count "
                    f"{seq.appearance_frames.shape[0]} != frame count {seq.length}"
                )
            d = seq.appearance_frames.shape[1]
            if appearance_dim is None:
                appearance_dim = d
            elif d != appearance_dim:
                report.append(
                    f"sequence {seq.id!r}: appearance dimension {d} "
                    f"!= dataset appearance dimension {appearance_dim}"
                )
    return report


def strip_privileged(sequence):
    """Copy of a sequence with planes and skeletons removed (test-time view)."""
    return replace(sequence, frames=[], planes=[])
