"""Rigid pose algebra and hand-eye calibration for an optically tracked probe.

Conventions: all frames are right-handed, transforms map local coordinates
into the parent frame, rotations are unit quaternions (w, x, y, z) and
translations are millimetres.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateMotionError,
    InsufficientDataError,
    InvalidInputError,
    InvalidTransformError,
)

UNIT_QUAT_TOL = 1e-9

# Default lever arm (mm) converting a rotation-angle residual into a point
# displacement at the probe face; typical probe-face to marker distance.
DEFAULT_LEVER_ARM_MM = 50.0


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 ⊗ q2 for (w, x, y, z) quaternions."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: Sequence[float], angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise InvalidInputError("rotation axis must be non-zero")
    axis = axis / norm
    half = 0.5 * angle_rad
    return np.concatenate(([math.cos(half)], math.sin(half) * axis))


def quat_from_rotvec(rotvec: Sequence[float]) -> np.ndarray:
    """Quaternion for a rotation vector (axis * angle, radians)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-12:
        # first-order expansion keeps the map smooth through zero
        q = np.concatenate(([1.0], 0.5 * rotvec))
        return q / np.linalg.norm(q)
    return quat_from_axis_angle(rotvec, angle)


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in radians, in [0, pi]."""
    return 2.0 * math.atan2(float(np.linalg.norm(q[1:])), abs(float(q[0])))


def quat_axis(q: np.ndarray) -> np.ndarray:
    """Rotation axis (unit vector); arbitrary but fixed for zero rotation."""
    v = np.asarray(q[1:], dtype=float)
    if q[0] < 0:
        v = -v
    norm = np.linalg.norm(v)
    if norm < 1e-15:
        return np.array([1.0, 0.0, 0.0])
    return v / norm


def _left_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix L with L(q) p = q ⊗ p."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def _right_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix R with R(q) p = p ⊗ q."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, z, -y],
            [y, -z, w, x],
            [z, y, -x, w],
        ]
    )


@dataclass(frozen=True)
class RigidTransform:
    """Unit-quaternion rotation plus translation in millimetres."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
            raise InvalidTransformError("non-finite transform components")
        if abs(float(np.linalg.norm(q)) - 1.0) > UNIT_QUAT_TOL:
            raise InvalidTransformError(
                f"quaternion norm {np.linalg.norm(q):.12f} deviates from 1 by more "
                f"than {UNIT_QUAT_TOL}"
            )
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_axis_angle(
        cls,
        axis: Sequence[float],
        angle_rad: float,
        translation: Sequence[float] = (0.0, 0.0, 0.0),
    ) -> "RigidTransform":
        return cls(quat_from_axis_angle(axis, angle_rad), np.asarray(translation, float))

    @classmethod
    def from_rotvec(
        cls,
        rotvec: Sequence[float],
        translation: Sequence[float] = (0.0, 0.0, 0.0),
    ) -> "RigidTransform":
        return cls(quat_from_rotvec(rotvec), np.asarray(translation, float))

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        max_angle_rad: float = math.pi,
        max_translation: float = 50.0,
    ) -> "RigidTransform":
        """Uniform random axis, uniform angle/translation magnitudes."""
        axis = rng.standard_normal(3)
        while np.linalg.norm(axis) < 1e-6:
            axis = rng.standard_normal(3)
        angle = rng.uniform(-max_angle_rad, max_angle_rad)
        t = rng.uniform(-max_translation, max_translation, size=3)
        return cls(quat_from_axis_angle(axis, angle), t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform that applies `other` first, then `self`."""
        q = quat_multiply(self.rotation, other.rotation)
        q = q / np.linalg.norm(q)
        t = self.apply(other.translation)
        return RigidTransform(q, t)

    def invert(self) -> "RigidTransform":
        qc = quat_conjugate(self.rotation)
        return RigidTransform(qc, -quat_to_matrix(qc) @ self.translation)

    def apply(self, points: Sequence[float] | np.ndarray) -> np.ndarray:
        """Map point(s) from the local frame to the parent frame: R p + t."""
        pts = np.asarray(points, dtype=float)
        r = quat_to_matrix(self.rotation)
        if pts.ndim == 1:
            return r @ pts + self.translation
        return pts @ r.T + self.translation

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians."""
        return quat_angle(self.rotation)

    def rotation_axis(self) -> np.ndarray:
        return quat_axis(self.rotation)

    def delta(self, other: "RigidTransform") -> tuple[float, float]:
        """(rotation angle rad, translation distance mm) from self to other."""
        rel = self.invert().compose(other)
        return rel.rotation_angle(), float(np.linalg.norm(other.translation - self.translation))

    def to_dict(self) -> dict:
        return {
            "quaternion": [float(v) for v in self.rotation],
            "translation_mm": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        return cls(np.asarray(data["quaternion"], float), np.asarray(data["translation_mm"], float))


def transform_point(transform: RigidTransform, point: Sequence[float]) -> np.ndarray:
    """Apply a rigid transform to a 3-point (mm): R p + t."""
    q = np.asarray(transform.rotation, dtype=float)
    if abs(float(np.linalg.norm(q)) - 1.0) > UNIT_QUAT_TOL:
        raise InvalidTransformError("non-unit quaternion")
    p = np.asarray(point, dtype=float).reshape(3)
    return transform.apply(p)


@dataclass(frozen=True)
class TrackedSample:
    """One optical-tracker reading: marker pose in tracker-world coordinates."""

    timestamp: float
    marker_pose: RigidTransform
    quality: float = 0.0

    def __post_init__(self) -> None:
        if self.quality < 0:
            raise InvalidInputError("quality (sphere-fit RMS, mm) must be >= 0")


@dataclass(frozen=True)
class MotionPair:
    """One calibration motion: paired relative motions of the two frames.

    `image_motion` (A) and `marker_motion` (B) are the relative motions of the
    image frame and the marker frame between two acquisition stations, both
    expressed in their own body frames, satisfying A X = X B for the fixed
    frame-to-frame transform X.
    """

    image_motion: RigidTransform
    marker_motion: RigidTransform
    displacement: float | None = None
    quality: float = 0.0


@dataclass(frozen=True)
class RejectionReport:
    n_accepted: int
    n_rejected: int
    n_rejected_displacement: int
    n_rejected_quality: int


@dataclass(frozen=True)
class Calibration:
    """Hand-eye solution X with its self-consistency residual."""

    transform: RigidTransform
    rms_error: float
    n_accepted: int
    n_rejected: int

    def __post_init__(self) -> None:
        if self.rms_error < 0:
            raise InvalidInputError("rms_error must be >= 0")
        if self.n_accepted < 2:
            raise InsufficientDataError("a valid calibration needs >= 2 motion pairs")

    def to_json(self) -> str:
        doc = self.transform.to_dict()
        doc.update(
            rms_error_mm=float(self.rms_error),
            n_accepted=int(self.n_accepted),
            n_rejected=int(self.n_rejected),
        )
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Calibration":
        doc = json.loads(text)
        return cls(
            transform=RigidTransform.from_dict(doc),
            rms_error=float(doc["rms_error_mm"]),
            n_accepted=int(doc["n_accepted"]),
            n_rejected=int(doc["n_rejected"]),
        )


PairLike = MotionPair | tuple[RigidTransform, RigidTransform]


def _as_pairs(pairs: Iterable[PairLike]) -> list[MotionPair]:
    out: list[MotionPair] = []
    for p in pairs:
        if isinstance(p, MotionPair):
            out.append(p)
        else:
            a, b = p
            out.append(MotionPair(image_motion=a, marker_motion=b))
    return out


def motion_pairs_from_stations(
    image_poses: Sequence[RigidTransform],
    marker_samples: Sequence[TrackedSample],
) -> list[MotionPair]:
    """Relative motions between consecutive stations, body-frame convention.

    The marker displacement between the two stations of a pair and the worse
    sphere-fit quality are carried along for data rejection.
    """
    if len(image_poses) != len(marker_samples):
        raise InvalidInputError("image and marker station counts differ")
    pairs = []
    for i in range(len(image_poses) - 1):
        a = image_poses[i].invert().compose(image_poses[i + 1])
        b = marker_samples[i].marker_pose.invert().compose(marker_samples[i + 1].marker_pose)
        disp = float(
            np.linalg.norm(
                marker_samples[i + 1].marker_pose.translation
                - marker_samples[i].marker_pose.translation
            )
        )
        qual = max(marker_samples[i].quality, marker_samples[i + 1].quality)
        pairs.append(MotionPair(a, b, displacement=disp, quality=qual))
    return pairs


def reject_samples(
    pairs: Iterable[PairLike],
    max_displacement: float = 5.0,
    max_quality: float = 0.5,
) -> tuple[list[MotionPair], RejectionReport]:
    """Drop motion pairs with excessive marker displacement or poor quality.

    A pair without an explicit displacement uses the magnitude of its marker
    motion translation. A pair can fail both criteria; the per-category
    counters then both increment while n_rejected counts it once.
    """
    accepted: list[MotionPair] = []
    n_disp = 0
    n_qual = 0
    n_rej = 0
    for pair in _as_pairs(pairs):
        disp = pair.displacement
        if disp is None:
            disp = float(np.linalg.norm(pair.marker_motion.translation))
        bad_disp = disp > max_displacement
        bad_qual = pair.quality > max_quality
        if bad_disp:
            n_disp += 1
        if bad_qual:
            n_qual += 1
        if bad_disp or bad_qual:
            n_rej += 1
        else:
            accepted.append(pair)
    report = RejectionReport(
        n_accepted=len(accepted),
        n_rejected=n_rej,
        n_rejected_displacement=n_disp,
        n_rejected_quality=n_qual,
    )
    return accepted, report


_PARALLEL_AXIS_TOL_RAD = math.radians(1.0)
_MIN_ROTATION_RAD = math.radians(0.05)


def _check_motion_diversity(pairs: Sequence[MotionPair]) -> None:
    axes = [
        quat_axis(p.image_motion.rotation)
        for p in pairs
        if p.image_motion.rotation_angle() > _MIN_ROTATION_RAD
    ]
    if len(axes) < 2:
        raise DegenerateMotionError("need >= 2 pairs with appreciable rotation")
    arr = np.asarray(axes)
    # axes are sign-canonicalized; parallel check must ignore orientation
    cosines = np.abs(arr @ arr.T)
    min_cos = float(np.min(cosines))
    if min_cos > math.cos(_PARALLEL_AXIS_TOL_RAD):
        raise DegenerateMotionError("all rotation axes parallel within 1 degree")


def hand_eye_calibrate(
    pairs: Iterable[PairLike],
    max_displacement: float | None = None,
    max_quality: float | None = None,
    lever_arm: float = DEFAULT_LEVER_ARM_MM,
) -> Calibration:
    """Solve A_i X = X B_i for the fixed transform X between two rigid frames.

    Rotation is recovered first from the stacked quaternion constraints
    q_A ⊗ q_X = q_X ⊗ q_B (null-space of the 4n x 4 system via SVD), then
    translation from the linear system (R_A - I) t_X = R_X t_B - t_A by least
    squares. Rejection runs first when thresholds are given.
    """
    all_pairs = _as_pairs(pairs)
    n_rejected = 0
    if max_displacement is not None or max_quality is not None:
        all_pairs, report = reject_samples(
            all_pairs,
            max_displacement=math.inf if max_displacement is None else max_displacement,
            max_quality=math.inf if max_quality is None else max_quality,
        )
        n_rejected = report.n_rejected
    if len(all_pairs) < 2:
        raise InsufficientDataError(
            f"hand-eye needs >= 2 accepted motion pairs, got {len(all_pairs)}"
        )
    _check_motion_diversity(all_pairs)

    rows = []
    for p in all_pairs:
        rows.append(_left_matrix(p.image_motion.rotation) - _right_matrix(p.marker_motion.rotation))
    m = np.vstack(rows)
    _, _, vt = np.linalg.svd(m)
    q = vt[-1]
    if q[0] < 0:
        q = -q
    q = q / np.linalg.norm(q)
    r_x = quat_to_matrix(q)

    lhs = []
    rhs = []
    eye = np.eye(3)
    for p in all_pairs:
        lhs.append(p.image_motion.rotation_matrix() - eye)
        rhs.append(r_x @ p.marker_motion.translation - p.image_motion.translation)
    t, *_ = np.linalg.lstsq(np.vstack(lhs), np.concatenate(rhs), rcond=None)

    x = RigidTransform(q, t)
    rms = self_consistency_error(x, all_pairs, lever_arm=lever_arm)
    return Calibration(transform=x, rms_error=rms, n_accepted=len(all_pairs), n_rejected=n_rejected)


def self_consistency_error(
    calibration: Calibration | RigidTransform,
    pairs: Iterable[PairLike],
    lever_arm: float = DEFAULT_LEVER_ARM_MM,
) -> float:
    """RMS residual of A_i X vs X B_i over the pairs, in millimetres.

    Each pair contributes the translation mismatch plus its rotation-angle
    mismatch converted to a point displacement via the lever arm.
    """
    x = calibration.transform if isinstance(calibration, Calibration) else calibration
    all_pairs = _as_pairs(pairs)
    if not all_pairs:
        raise InsufficientDataError("self-consistency needs at least one pair")
    errs = []
    for p in all_pairs:
        left = p.image_motion.compose(x)
        right = x.compose(p.marker_motion)
        dt = float(np.linalg.norm(left.translation - right.translation))
        dq = quat_multiply(quat_conjugate(left.rotation), right.rotation)
        errs.append(dt + lever_arm * quat_angle(dq))
    return float(np.sqrt(np.mean(np.square(errs))))
