"""Tracking-coordinate 4D re-alignment: resample frames into a reference grid
so a fixed VOI keeps sampling the same world anatomy.

Interpolation runs on the raw 8-bit codes (as a clinical pipeline resampling
display volumes would), re-quantized round-half-up; it does not linearize
first. Out-of-field samples are masked false and set to 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidInputError
from .geometry import RigidTransform
from .phantom import VolumeFrame, grid_centers, mm_to_grid


@dataclass(frozen=True)
class AlignedSequence:
    """Frames resampled onto the reference frame's grid.

    `aligned_flags[i]` is False for frames whose source pose was missing
    (tracker dropout); those frames carry zero voxels and an all-false mask
    so they drop out of masked statistics.
    """

    reference_index: int
    frames: tuple[VolumeFrame, ...]
    validity_masks: tuple[np.ndarray, ...]
    aligned_flags: tuple[bool, ...]
    original_poses: tuple[RigidTransform | None, ...]


def _trilinear(volume: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a 3-D array at continuous indices (N, 3).

    Callers guarantee coords lie in [0, dim-1] per axis; the corner clamp
    only keeps the +1 neighbor of points sitting exactly on the top edge in
    bounds (their weight there is exactly 1).
    """
    dims = np.asarray(volume.shape)
    c0 = np.floor(coords).astype(np.int64)
    c0 = np.minimum(c0, dims - 2)
    c0 = np.maximum(c0, 0)
    frac = coords - c0
    vals = np.zeros(coords.shape[0], dtype=float)
    data = volume.astype(float)
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                w = wx * wy * wz
                vals += w * data[c0[:, 0] + dx, c0[:, 1] + dy, c0[:, 2] + dz]
    return vals


def realign_frame(
    src: VolumeFrame,
    ref_pose: RigidTransform,
    ref_dims: Sequence[int] | None = None,
    ref_voxel_size=None,
) -> tuple[VolumeFrame, np.ndarray]:
    """Resample one frame onto the reference grid via world coordinates.

    Each reference voxel center is mapped through the reference pose into
    world space and back through the source pose into continuous source grid
    indices; values are trilinear on raw codes, re-quantized round-half-up.
    Returns the resampled frame (stamped with the reference pose) and the
    in-field validity mask.
    """
    if src.pose is None:
        raise InvalidInputError("source frame has no pose; cannot realign")
    dims = tuple(int(d) for d in (ref_dims if ref_dims is not None else src.dims))
    vs = np.asarray(ref_voxel_size if ref_voxel_size is not None else src.voxel_size, float)
    if vs.ndim == 0:
        vs = np.repeat(vs, 3)

    # bit-equal pose and grid: resampling is the identity, skip it
    if (
        dims == src.dims
        and np.array_equal(vs, src.voxel_size)
        and np.array_equal(src.pose.rotation, ref_pose.rotation)
        and np.array_equal(src.pose.translation, ref_pose.translation)
    ):
        frame = VolumeFrame(
            timestamp=src.timestamp, pose=ref_pose, dims=dims, voxel_size=vs, voxels=src.voxels
        )
        return frame, np.ones(dims, dtype=bool)

    centers = grid_centers(dims, tuple(vs))
    world = ref_pose.apply(centers)
    local = src.pose.invert().apply(world)
    coords = mm_to_grid(local, src.dims, src.voxel_size)

    src_dims = np.asarray(src.dims, dtype=float)
    # epsilon absorbs float rounding of pose round trips at the grid boundary
    eps = 1e-9
    valid = np.all((coords >= -eps) & (coords <= src_dims - 1.0 + eps), axis=1)

    values = np.zeros(coords.shape[0], dtype=float)
    if np.any(valid):
        clipped = np.clip(coords[valid], 0.0, src_dims - 1.0)
        values[valid] = _trilinear(src.voxels, clipped)
    codes = np.floor(values + 0.5).astype(np.uint8)
    codes[~valid] = 0

    frame = VolumeFrame(
        timestamp=src.timestamp,
        pose=ref_pose,
        dims=dims,
        voxel_size=vs,
        voxels=codes.reshape(dims),
    )
    return frame, valid.reshape(dims)


def _slerp(qa: np.ndarray, qb: np.ndarray, u: float) -> np.ndarray:
    dot = float(np.dot(qa, qb))
    if dot < 0:
        qb = -qb
        dot = -dot
    dot = min(dot, 1.0)
    theta = np.arccos(dot)
    if theta < 1e-9:
        q = (1 - u) * qa + u * qb
    else:
        q = (np.sin((1 - u) * theta) * qa + np.sin(u * theta) * qb) / np.sin(theta)
    return q / np.linalg.norm(q)


def _interpolate_pose(
    frames: Sequence[VolumeFrame], i: int
) -> RigidTransform | None:
    prev_j = next((j for j in range(i - 1, -1, -1) if frames[j].pose is not None), None)
    next_j = next((j for j in range(i + 1, len(frames)) if frames[j].pose is not None), None)
    if prev_j is None or next_j is None:
        return None
    a, b = frames[prev_j], frames[next_j]
    u = (frames[i].timestamp - a.timestamp) / (b.timestamp - a.timestamp)
    q = _slerp(a.pose.rotation, b.pose.rotation, u)
    t = (1 - u) * a.pose.translation + u * b.pose.translation
    return RigidTransform(q, t)


def realign_sequence(
    frames: Sequence[VolumeFrame],
    reference_index: int = 0,
    interpolate_dropouts: bool = False,
) -> AlignedSequence:
    """Resample every frame onto the grid of the reference frame.

    The reference frame passes through untouched. Frames without a pose are
    excluded (zero voxels, all-false mask) unless `interpolate_dropouts`
    bridges them by linear/slerp interpolation between posed neighbors.
    """
    if not frames:
        raise InsufficientDataError("empty frame sequence")
    if not 0 <= reference_index < len(frames):
        raise InvalidInputError("reference index out of range")
    ref = frames[reference_index]
    if ref.pose is None:
        raise InvalidInputError("reference frame has no pose")

    out_frames: list[VolumeFrame] = []
    masks: list[np.ndarray] = []
    flags: list[bool] = []
    originals: list[RigidTransform | None] = []
    for i, frame in enumerate(frames):
        originals.append(frame.pose)
        if i == reference_index:
            out_frames.append(frame)
            masks.append(np.ones(frame.dims, dtype=bool))
            flags.append(True)
            continue
        pose = frame.pose
        if pose is None and interpolate_dropouts:
            pose = _interpolate_pose(frames, i)
        if pose is None:
            out_frames.append(
                VolumeFrame(
                    timestamp=frame.timestamp,
                    pose=ref.pose,
                    dims=ref.dims,
                    voxel_size=ref.voxel_size,
                    voxels=np.zeros(ref.dims, dtype=np.uint8),
                )
            )
            masks.append(np.zeros(ref.dims, dtype=bool))
            flags.append(False)
            continue
        src = frame if frame.pose is not None else VolumeFrame(
            timestamp=frame.timestamp,
            pose=pose,
            dims=frame.dims,
            voxel_size=frame.voxel_size,
            voxels=frame.voxels,
        )
        resampled, mask = realign_frame(src, ref.pose, ref.dims, ref.voxel_size)
        out_frames.append(resampled)
        masks.append(mask)
        flags.append(True)

    return AlignedSequence(
        reference_index=reference_index,
        frames=tuple(out_frames),
        validity_masks=tuple(masks),
        aligned_flags=tuple(flags),
        original_poses=tuple(originals),
    )
