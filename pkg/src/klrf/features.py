"""Per-frame cue extraction, Fourier temporal pooling, and data augmentation."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from klrf.model import ActionSequence, DataError, Sample, SkeletonFrame, LayoutPlane
from klrf.numeric import dft_low_magnitudes

FALLBACK_GRID = 16  # depth fallback descriptor is a 16x16 block-averaged grid


def layout_cue(frame, planes):
    """Joint-to-plane displacement vectors, concatenated over (joint, plane).

    The displacement for joint p and plane l is the perpendicular offset
    from the plane's foot-of-perpendicular point:
    (normal . p - offset) * normal. Output length 3 * P * L.
    """
    if not planes:
        raise DataError("no layout planes")
    out = np.empty((frame.joint_count, len(planes), 3))
    for li, plane in enumerate(planes):
        signed = frame.joints @ plane.normal - plane.offset  # (P,)
        out[:, li, :] = signed[:, None] * plane.normal[None, :]
    return out.reshape(-1)


def skeleton_cue(frame_t, frame_prev, frame_first):
    """Pairwise + motion + offset skeleton blocks, length 3*(P(P-1)/2 + 2P).

    Pairwise: p_p - p_q for unordered pairs p < q. Motion: difference to the
    previous frame. Offset: difference to the first frame.
    """
    P = frame_t.joint_count
    if frame_prev.joint_count != P or frame_first.joint_count != P:
        raise DataError("joint-count mismatch across frames")
    j = frame_t.joints
    iu, ju = np.triu_indices(P, k=1)
    pairwise = j[iu] - j[ju]
    motion = j - frame_prev.joints
    offset = j - frame_first.joints
    return np.concatenate([pairwise.reshape(-1), motion.reshape(-1), offset.reshape(-1)])


def depth_cue_fallback(depth_frame, grid=FALLBACK_GRID):
    """Block-averaged, min-max normalized depth grid, flattened to grid^2 reals.

    Constant frames map to all zeros. Stand-in appearance descriptor for
    datasets without pre-extracted per-frame vectors.
    """
    d = np.asarray(depth_frame, dtype=float)
    if d.ndim != 2 or d.size == 0:
        raise DataError("depth frame must be a nonempty 2D array")
    blocks = [
        [b.mean() for b in np.array_split(row_band, grid, axis=1)]
        for row_band in np.array_split(d, grid, axis=0)
    ]
    g = np.asarray(blocks)
    lo, hi = g.min(), g.max()
    if hi - lo == 0:
        return np.zeros(grid * grid)
    return ((g - lo) / (hi - lo)).reshape(-1)


def _segment_bounds(T, segments):
    """Contiguous equal segments; remainder frames go to the last segment."""
    base = T // segments
    bounds = []
    for s in range(segments):
        start = s * base
        stop = start + base if s < segments - 1 else T
        bounds.append((start, stop))
    return bounds


def fourier_encode(cue, levels, k):
    """Temporal-pyramid DFT-magnitude encoding of a (T, d) cue matrix.

    Level i has 2^(i-1) contiguous segments; each (segment, dimension) pair
    contributes its k lowest-frequency DFT magnitudes. Concatenation order is
    (level, segment, dimension, frequency); output length d*k*(2^levels - 1).
    Segments left empty by short sequences are encoded as zeros.
    """
    cue = np.asarray(cue, dtype=float)
    if cue.ndim == 1:
        cue = cue[:, None]
    T, d = cue.shape
    if T < 1 or levels < 1 or k < 1:
        raise DataError("fourier_encode requires T >= 1, levels >= 1, k >= 1")
    out = []
    for level in range(1, levels + 1):
        for start, stop in _segment_bounds(T, 2 ** (level - 1)):
            seg = cue[start:stop]
            if seg.shape[0] == 0:
                seg = np.zeros((1, d))
            for dim in range(d):
                out.append(dft_low_magnitudes(seg[:, dim], k))
    return np.concatenate(out)


def appearance_cue(sequence):
    """Per-frame appearance matrix: ingested vectors, else fallback descriptor."""
    if sequence.appearance_frames is not None:
        return sequence.appearance_frames
    if sequence.depth_frames:
        return np.stack([depth_cue_fallback(f) for f in sequence.depth_frames])
    raise DataError(
        f"sequence {sequence.id!r} has no appearance source; "
        "supply appearance_frames or depth_frames"
    )


def kinematic_cues(sequence):
    """(layout cue matrix, skeleton cue matrix), each (T, d)."""
    frames = sequence.frames
    layout = np.stack([layout_cue(f, sequence.planes) for f in frames])
    skeleton = np.stack(
        [
            skeleton_cue(frames[t], frames[t - 1] if t > 0 else frames[0], frames[0])
            for t in range(len(frames))
        ]
    )
    return layout, skeleton


def assemble_features(sequence, config, label_map=None):
    """Sequence-level Sample: pooled appearance A and pooled kinematics K.

    K is empty when planes or skeletons are absent (the test-time case).
    """
    levels = config.pyramid_levels
    k = config.fourier_coeffs_per_segment
    appearance = fourier_encode(appearance_cue(sequence), levels, k)
    if sequence.has_kinematics:
        layout, skeleton = kinematic_cues(sequence)
        kinematic = np.concatenate(
            [fourier_encode(layout, levels, k), fourier_encode(skeleton, levels, k)]
        )
    else:
        kinematic = np.empty(0)
    label_index = label_map[sequence.label] if label_map is not None else -1
    return Sample(
        appearance=appearance,
        kinematic=kinematic,
        label_index=label_index,
        augmentation_group=sequence.augmentation_group,
        sequence_id=sequence.id,
    )


def _rotation_matrix(axis, angle):
    """Rodrigues rotation about a unit axis."""
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    K = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def _scene_centroid(sequence):
    return np.mean([f.joints.mean(axis=0) for f in sequence.frames], axis=0)


def _bbox_diagonal(sequence):
    pts = np.concatenate([f.joints for f in sequence.frames])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def _translate(sequence, offset, tag):
    frames = [SkeletonFrame(f.joints + offset, f.t) for f in sequence.frames]
    return replace(
        sequence, id=f"{sequence.id}#{tag}", frames=frames,
        augmentation_group=sequence.augmentation_group,
    )


def _rotate(sequence, R, center, tag):
    frames = [
        SkeletonFrame((f.joints - center) @ R.T + center, f.t) for f in sequence.frames
    ]
    planes = []
    for p in sequence.planes:
        normal = R @ p.normal
        # Plane points move as x -> R(x - c) + c, so the offset picks up the
        # centroid terms while the normal co-rotates.
        offset = p.offset - p.normal @ center + normal @ center
        planes.append(LayoutPlane(normal, offset, p.label))
    return replace(
        sequence, id=f"{sequence.id}#{tag}", frames=frames, planes=planes,
        augmentation_group=sequence.augmentation_group,
    )


def _temporal_shift(sequence, offset, tag):
    T = sequence.length
    offset = min(offset, T - 1)
    order = np.roll(np.arange(T), -offset)
    frames = [
        SkeletonFrame(sequence.frames[i].joints, t + 1) for t, i in enumerate(order)
    ] if sequence.frames else []
    app = sequence.appearance_frames[order] if sequence.appearance_frames is not None else None
    depth = [sequence.depth_frames[i] for i in order] if sequence.depth_frames else None
    return replace(
        sequence, id=f"{sequence.id}#{tag}", frames=frames,
        appearance_frames=app, depth_frames=depth,
        augmentation_group=sequence.augmentation_group,
    )


def augment(sequence, config, rng):
    """Synthetic variants of one training sequence (original not included).

    Translations jitter joints, rotations rigidly move joints and planes
    about the scene centroid, temporal offsets cyclically shift the encoding
    window start. Variants keep the original label and augmentation group.
    By default the three families are applied independently; product_mode
    composes them.
    """
    aug = config.augmentation
    center = _scene_centroid(sequence)
    diag = _bbox_diagonal(sequence)
    scale = 0.05 * (diag if diag > 0 else 1.0)

    def translations(seq, n):
        return [
            _translate(seq, rng.uniform(-scale, scale, 3), f"t{i}") for i in range(n)
        ]

    def rotations(seq, n):
        out = []
        for i in range(n):
            axis = rng.standard_normal(3)
            while np.linalg.norm(axis) < 1e-12:
                axis = rng.standard_normal(3)
            angle = rng.uniform(0.0, np.deg2rad(aug.rotation_max_deg))
            out.append(_rotate(seq, _rotation_matrix(axis, angle), center, f"r{i}"))
        return out

    def shifts(seq, n):
        return [_temporal_shift(seq, i, f"o{i}") for i in range(n)]

    if not aug.product_mode:
        return (
            translations(sequence, aug.translations)
            + rotations(sequence, aug.rotations)
            + shifts(sequence, aug.temporal_offsets)
        )
    variants = []
    for ti, tv in enumerate(translations(sequence, aug.translations)):
        for rv in rotations(tv, aug.rotations):
            variants.extend(shifts(rv, aug.temporal_offsets))
    return variants
