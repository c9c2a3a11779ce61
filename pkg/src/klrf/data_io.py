"""Dataset and model persistence, plus the synthetic benchmark generator.

Dataset layout: a JSON manifest referencing one JSON-lines file per
sequence. Each sequence file starts with a header record (id, label,
planes, ...) followed by one record per frame (joints, appearance vector,
optional depth grid). Model files are a small binary envelope (magic,
version, checksum) around compressed JSON.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from klrf.forest import Forest, SplitFunction, TreeNode
from klrf.learning import KLRFModel
from klrf.model import (
    ActionSequence,
    DataError,
    KLRFConfig,
    LayoutPlane,
    SkeletonFrame,
    validate_dataset,
)

MODEL_MAGIC = b"KLRF"
MODEL_VERSION = 1


class ModelFormatError(DataError):
    """Unreadable, truncated, or version-incompatible model file."""


# ---------------------------------------------------------------------------
# dataset manifest + sequence files

def save_dataset(sequences, out_dir, name, class_names=None):
    """Write sequence files and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seq_dir = out_dir / "sequences"
    seq_dir.mkdir(exist_ok=True)
    paths = []
    for seq in sequences:
        fname = f"{_safe_name(seq.id)}.jsonl"
        _write_sequence(seq, seq_dir / fname)
        paths.append(f"sequences/{fname}")
    joint_count = sequences[0].frames[0].joint_count if sequences[0].frames else 0
    plane_labels = [p.label for p in sequences[0].planes]
    appearance_dim = (
        int(sequences[0].appearance_frames.shape[1])
        if sequences[0].appearance_frames is not None
        else None
    )
    manifest = {
        "name": name,
        "joint_count": joint_count,
        "plane_labels": plane_labels,
        "class_names": sorted(class_names or {s.label for s in sequences}),
        "appearance_dim": appearance_dim,
        "sequences": paths,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def _safe_name(s):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in s)


def _write_sequence(seq, path):
    with open(path, "w") as fh:
        header = {
            "id": seq.id,
            "subject": seq.subject,
            "view": seq.view,
            "label": seq.label,
            "augmentation_group": seq.augmentation_group,
            "planes": [
                {"normal": p.normal.tolist(), "offset": p.offset, "label": p.label}
                for p in seq.planes
            ],
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        T = seq.length
        for t in range(T):
            rec = {"t": t + 1}
            if seq.frames:
                rec["joints"] = seq.frames[t].joints.tolist()
            if seq.appearance_frames is not None:
                rec["appearance"] = seq.appearance_frames[t].tolist()
            if seq.depth_frames:
                d = np.asarray(seq.depth_frames[t])
                rec["depth"] = {
                    "width": int(d.shape[1]),
                    "height": int(d.shape[0]),
                    "values": d.reshape(-1).tolist(),
                }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_sequence(path):
    path = Path(path)
    try:
        with open(path) as fh:
            header = json.loads(fh.readline())
            frames, app_rows, depth_frames = [], [], []
            for t, line in enumerate(fh):
                rec = json.loads(line)
                if "joints" in rec:
                    frames.append(SkeletonFrame(np.asarray(rec["joints"]), rec.get("t", t + 1)))
                if "appearance" in rec:
                    app_rows.append(rec["appearance"])
                if "depth" in rec:
                    d = rec["depth"]
                    depth_frames.append(
                        np.asarray(d["values"], dtype=float).reshape(d["height"], d["width"])
                    )
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"cannot parse sequence file {path}: {exc}") from exc
    planes = [
        LayoutPlane(np.asarray(p["normal"]), p["offset"], p["label"])
        for p in header.get("planes", [])
    ]
    return ActionSequence(
        id=header["id"],
        label=header["label"],
        subject=header.get("subject", ""),
        view=header.get("view", ""),
        frames=frames,
        planes=planes,
        appearance_frames=np.asarray(app_rows) if app_rows else None,
        depth_frames=depth_frames or None,
        augmentation_group=header.get("augmentation_group", "") or header["id"],
    )


def load_dataset(manifest_path):
    """Load and validate all sequences referenced by a manifest."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    sequences = []
    for rel in manifest["sequences"]:
        seq = load_sequence(base / rel)
        sequences.append(seq)
    joint_count = manifest.get("joint_count") or 0
    for seq in sequences:
        if seq.frames and joint_count and seq.frames[0].joint_count != joint_count:
            raise DataError(
                f"sequence {seq.id!r}: joint count {seq.frames[0].joint_count} "
                f"!= manifest joint_count {joint_count}"
            )
        if manifest.get("appearance_dim") and seq.appearance_frames is not None:
            if seq.appearance_frames.shape[1] != manifest["appearance_dim"]:
                raise DataError(
                    f"sequence {seq.id!r}: appearance dimension mismatch with manifest"
                )
        known = set(manifest.get("class_names") or [])
        if known and seq.label not in known:
            raise DataError(f"sequence {seq.id!r}: unknown class name {seq.label!r}")
        declared = manifest.get("plane_labels") or []
        if declared and [p.label for p in seq.planes] not in ([], declared):
            raise DataError(f"sequence {seq.id!r}: plane order differs from manifest")
    report = validate_dataset(sequences)
    if report:
        raise DataError("invalid dataset: " + "; ".join(report))
    return sequences


# ---------------------------------------------------------------------------
# model persistence

def _tree_to_obj(node):
    if node.is_leaf:
        return {
            "hist": node.class_hist.tolist(),
            "kin": node.mean_kinematic.tolist(),
            "count": node.count,
        }
    return {
        "gamma": node.split.gamma,
        "tau": node.split.tau,
        "count": node.count,
        "left": _tree_to_obj(node.left),
        "right": _tree_to_obj(node.right),
    }


def _tree_from_obj(obj):
    if "hist" in obj:
        return TreeNode(
            class_hist=np.asarray(obj["hist"]),
            mean_kinematic=np.asarray(obj["kin"]),
            count=obj["count"],
        )
    return TreeNode(
        split=SplitFunction(obj["gamma"], obj["tau"]),
        left=_tree_from_obj(obj["left"]),
        right=_tree_from_obj(obj["right"]),
        count=obj["count"],
    )


def _forest_to_obj(forest):
    return {
        "trees": [_tree_to_obj(t) for t in forest.trees],
        "label_names": forest.label_names,
        "config": forest.config_dict,
        "membership": [
            bytes(np.packbits(m)).hex() for m in forest.bootstrap_membership
        ],
        "n_samples": int(forest.bootstrap_membership.shape[1]),
        "feature_dim": forest.feature_dim,
        "kinematic_dim": forest.kinematic_dim,
        "feature_space": forest.feature_space,
        "mode": forest.mode,
        "quality_counts": forest.quality_counts,
    }


def _forest_from_obj(obj):
    n = obj["n_samples"]
    membership = np.stack(
        [np.unpackbits(np.frombuffer(bytes.fromhex(m), dtype=np.uint8))[:n].astype(bool)
         for m in obj["membership"]]
    )
    return Forest(
        trees=[_tree_from_obj(t) for t in obj["trees"]],
        label_names=obj["label_names"],
        config_dict=obj["config"],
        bootstrap_membership=membership,
        feature_dim=obj["feature_dim"],
        kinematic_dim=obj["kinematic_dim"],
        feature_space=obj["feature_space"],
        mode=obj["mode"],
        quality_counts=obj["quality_counts"],
    )


def save_model(model, path, include_references=False):
    """Versioned, checksummed model file; returns the payload checksum hex."""
    obj = {
        "forest": _forest_to_obj(model.forest),
        "label_names": model.label_names,
        "config": model.config.to_dict(),
        "usefulness": None if model.usefulness is None else model.usefulness.tolist(),
        "sample_labels": (
            None if model.sample_labels is None else model.sample_labels.tolist()
        ),
        "sample_groups": model.sample_groups,
    }
    if include_references and model.f_appearance is not None:
        obj["f_appearance"] = _forest_to_obj(model.f_appearance)
        obj["f_kinematic"] = _forest_to_obj(model.f_kinematic)
    payload = zlib.compress(json.dumps(obj, sort_keys=True).encode())
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(MODEL_VERSION.to_bytes(4, "little"))
        fh.write(digest)
        fh.write(payload)
    return digest.hex()


def load_model(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    if len(blob) < 40 or blob[:4] != MODEL_MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version = int.from_bytes(blob[4:8], "little")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    digest, payload = blob[8:40], blob[40:]
    if hashlib.sha256(payload).digest() != digest:
        raise ModelFormatError("model file checksum failure (truncated or corrupted)")
    obj = json.loads(zlib.decompress(payload))
    model = KLRFModel(
        forest=_forest_from_obj(obj["forest"]),
        label_names=obj["label_names"],
        config=KLRFConfig.from_dict(obj["config"]),
        usefulness=(
            None if obj["usefulness"] is None else np.asarray(obj["usefulness"])
        ),
        sample_labels=(
            None if obj["sample_labels"] is None else np.asarray(obj["sample_labels"])
        ),
        sample_groups=obj["sample_groups"],
    )
    if "f_appearance" in obj:
        model.f_appearance = _forest_from_obj(obj["f_appearance"])
        model.f_kinematic = _forest_from_obj(obj["f_kinematic"])
    return model


def model_checksum(path):
    blob = Path(path).read_bytes()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# synthetic privileged-information benchmark

@dataclass
class SynthConfig:
    """Benchmark where half the classes are separable mainly through scene
    geometry and the other half mainly through the appearance signal."""

    num_classes: int = 6
    sequences_per_class: int = 50
    frames_per_sequence: int = 20
    kinematic_discriminative_classes: list = field(default_factory=list)
    appearance_discriminative_classes: list = field(default_factory=list)
    sigma_a: float = 0.95
    sigma_k: float = 0.02
    views: list = field(default_factory=lambda: [0.0])
    seed: int = 0
    appearance_dim: int = 14
    joint_count: int = 5
    subjects_per_split: int = 5
    # Appearance signal separating the kinematic-discriminative classes in
    # their ambiguous mode; small relative to sigma_a by construction.
    subtle_scale: float = 0.6
    # Same, for the distinct mode; comfortably above the noise floor.
    strong_scale: float = 1.3
    # Probability that a sequence is drawn in the ambiguous mode.
    ambiguous_prob: float = 0.5
    # Per-degree strength of the deterministic appearance distortion applied
    # to non-zero views (cross-view benchmarks).
    view_distortion: float = 0.01

    def __post_init__(self):
        names = self.class_names()
        half = self.num_classes // 2
        if not self.kinematic_discriminative_classes:
            self.kinematic_discriminative_classes = names[:half]
        if not self.appearance_discriminative_classes:
            self.appearance_discriminative_classes = names[half:]
        both = set(self.kinematic_discriminative_classes) | set(
            self.appearance_discriminative_classes
        )
        if both != set(names) or (
            set(self.kinematic_discriminative_classes)
            & set(self.appearance_discriminative_classes)
        ):
            raise DataError("class subsets must partition the class set")
        if self.sigma_a < 0 or self.sigma_k < 0:
            raise DataError("noise levels must be nonnegative")

    def class_names(self):
        half = self.num_classes // 2
        kin = [f"kin_{chr(ord('a') + i)}" for i in range(half)]
        app = [f"app_{chr(ord('a') + i)}" for i in range(self.num_classes - half)]
        return kin + app


def _synth_planes():
    return [
        LayoutPlane(np.array([0.0, 0.0, 1.0]), 0.6, "bed_top"),
        LayoutPlane(np.array([0.0, 0.0, 1.0]), 0.0, "floor"),
    ]


def _base_skeleton(rng, joint_count):
    return np.column_stack(
        [
            rng.uniform(-0.3, 0.3, joint_count),
            rng.uniform(-0.3, 0.3, joint_count),
            rng.uniform(-0.15, 0.15, joint_count),
        ]
    )


def _rotation_z(angle_deg):
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def synth_generate(config):
    """Pure-seed generator; returns (train_sequences, test_sequences).

    Kinematic-discriminative classes share the appearance signal family (up
    to a subtle residual buried in noise) but sit at distinct heights
    relative to the bed/floor planes. Appearance-discriminative classes
    share geometry but differ in the signal's temporal frequency. Train and
    test splits use disjoint subject pools. Non-zero views rotate the
    geometry about the vertical axis and distort the appearance signal.
    """
    names = config.class_names()
    kin_names = config.kinematic_discriminative_classes
    app_names = config.appearance_discriminative_classes
    n_kin, n_app = len(kin_names), len(app_names)
    if config.appearance_dim < n_app + 5 + 2 * n_kin:
        raise DataError("appearance_dim too small for the class layout")
    proto_rng = np.random.default_rng([config.seed, 0])
    T = config.frames_per_sequence
    kin_heights = np.linspace(0.1, 1.3, max(n_kin, 1))
    # Appearance dimension layout:
    #   dims [0, n_app)     one oscillation band per appearance class;
    #                       kinematic classes carry a random amplitude
    #                       straddling the class levels, so thresholds that
    #                       separate appearance classes scatter the group
    #   2 dims              group markers (kinematic classes run hot)
    #   2 dims              mode markers: every sequence is drawn either in a
    #                       distinct or an ambiguous mode, independent of its
    #                       class, and the markers expose which
    #   1 dim               submode marker: ambiguous sequences come in two
    #                       flavours that swap which residual dim encodes
    #                       which class; the flavour is class-independent
    #   next n_kin dims     constant residuals separating the kinematic
    #                       classes in distinct-mode sequences
    #   next n_kin dims     weaker residuals doing the same for
    #                       ambiguous-mode sequences, under a
    #                       flavour-dependent class-to-dim assignment
    # markers come in pairs so candidate sampling rarely misses them
    band_freqs = 3 + 2 * np.arange(max(n_app, 1))
    marker_dims = [n_app, n_app + 1]
    mode_dims = [n_app + 2, n_app + 3]
    submode_dim = n_app + 4
    strong_base = n_app + 5
    subtle_base = n_app + 5 + n_kin
    shared_base = _base_skeleton(proto_rng, config.joint_count)
    heights = {
        name: (kin_heights[kin_names.index(name)] if name in kin_names else 0.4)
        for name in names
    }
    # Ambiguous flavour-1 sequences of every kinematic class collapse onto one
    # shared height, so even the scene geometry cannot tell them apart; their
    # class is only recoverable from the flavour-dependent residual dims.
    if n_kin > 1:
        shared_amb_height = float(kin_heights[-1] + kin_heights[-2]) / 2.0
    else:
        shared_amb_height = float(kin_heights[0])

    def make_split(split_tag, subject_offset):
        sequences = []
        t_axis = np.arange(T)
        for view in config.views:
            Rv = _rotation_z(view)
            shift = int(round(view / 6.0)) % T
            for name in names:
                base = shared_base + np.array([0.0, 0.0, heights[name]])
                for s in range(config.sequences_per_class):
                    subject = subject_offset + s % config.subjects_per_split
                    rng = np.random.default_rng(
                        [config.seed, 1, hash_name(name), int(view * 100), subject, s,
                         0 if split_tag == "train" else 1]
                    )
                    phase = rng.uniform(0, 2 * np.pi, config.appearance_dim)
                    ambiguous = rng.uniform() < config.ambiguous_prob
                    flavour = rng.uniform() < 0.5
                    seq_base = base
                    if name in kin_names and ambiguous and flavour:
                        seq_base = shared_base + np.array(
                            [0.0, 0.0, shared_amb_height]
                        )
                    app = rng.normal(0, config.sigma_a, (T, config.appearance_dim))
                    for j, fj in enumerate(band_freqs):
                        if name in app_names:
                            # graded own-band strength: later appearance
                            # classes are harder, spreading their usefulness
                            ai = app_names.index(name)
                            amp = (2.2 - 0.2 * ai) if j == ai else 0.3
                        else:
                            amp = rng.uniform(0.2, 2.8)
                        app[:, j] += amp * np.sin(2 * np.pi * fj * t_axis / T + phase[j])
                    if name in kin_names:
                        marker_level = rng.normal(3.0, 0.15, 2)
                        ci = kin_names.index(name)
                        if ambiguous:
                            # the residual dim depends on the flavour, so any
                            # one residual dim mixes two classes unless the
                            # flavours are separated first
                            if flavour:
                                target = subtle_base + (ci + 1) % n_kin
                            else:
                                target = subtle_base + ci
                            app[:, target] += config.subtle_scale
                            # misleading residue: ambiguous sequences carry
                            # class-independent offsets across the whole
                            # distinct-mode block, so thresholds separating
                            # the distinct classes scatter them
                            app[:, strong_base:strong_base + n_kin] += rng.uniform(
                                0.0, 1.5 * config.strong_scale, n_kin
                            )
                        else:
                            app[:, strong_base + ci] += config.strong_scale
                            # mirror-image residue: distinct sequences blanket
                            # the ambiguous-mode block the same way
                            app[:, subtle_base:subtle_base + n_kin] += rng.uniform(
                                0.0, 1.5 * config.subtle_scale, n_kin
                            )
                    else:
                        marker_level = rng.normal(0.3, 0.15, 2)
                    # constant markers survive every pyramid segment, so the
                    # forest sees them at all temporal scales
                    app[:, marker_dims] += marker_level
                    app[:, mode_dims] += 3.0 if ambiguous else 0.2
                    app[:, submode_dim] += 3.0 if flavour else 0.2
                    if view != 0.0:
                        app = np.roll(app, shift, axis=0)
                        app = app * (1.0 + config.view_distortion * view / 10.0)
                    # skeleton: prototype + shared wiggle + subject jitter
                    frames = []
                    jitter = rng.normal(0, config.sigma_k, base.shape)
                    for t in range(T):
                        wiggle = 0.03 * np.sin(2 * np.pi * t / T + phase[0])
                        joints = seq_base + jitter + np.array([wiggle, 0.0, 0.0])
                        frames.append(SkeletonFrame(joints @ Rv.T, t + 1))
                    seq_id = f"{split_tag}_{name}_v{view:g}_s{subject}_{s}"
                    sequences.append(
                        ActionSequence(
                            id=seq_id,
                            label=name,
                            subject=f"subj{subject}",
                            view=f"{view:g}",
                            frames=frames,
                            planes=_synth_planes(),
                            appearance_frames=app,
                        )
                    )
        return sequences

    train = make_split("train", 0)
    test = make_split("test", config.subjects_per_split)
    return train, test


def hash_name(name):
    """Stable small integer from a string (used to seed per-class streams)."""
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
