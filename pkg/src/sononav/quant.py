"""Perfusion quantification: linearization, VOI time-intensity curves, live
steady-state detection, and monoexponential replenishment fitting.

Voxels are linearized individually before averaging; under log compression
the order matters, and per-voxel linearization keeps the TIC proportional to
mean contrast concentration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyVoiError, InsufficientDataError, InvalidInputError
from .phantom import DEFAULT_DYNAMIC_RANGE_DB, VolumeFrame, grid_centers

DEFAULT_STEADY_WINDOW_S = 20.0
DEFAULT_SLOPE_TOLERANCE = 0.005
DEFAULT_MIN_FIT_SPAN_S = 60.0
DEFAULT_BETA_BRACKET = (1e-4, 10.0)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def linearize(codes, dynamic_range: float = DEFAULT_DYNAMIC_RANGE_DB):
    """Invert log compression: 8-bit code -> linear intensity in (0, 1]."""
    if dynamic_range <= 0:
        raise InvalidInputError("dynamic range must be > 0")
    v = np.asarray(codes, dtype=float)
    return 10.0 ** ((v / 255.0 * dynamic_range - dynamic_range) / 20.0)


@dataclass(frozen=True)
class VOI:
    """Ellipsoidal or mask-defined volume of interest on the reference grid."""

    center: np.ndarray | None = None
    radii: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if not mask.any():
                raise InvalidInputError("explicit VOI mask is empty")
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)
            return
        if self.center is None or self.radii is None:
            raise InvalidInputError("VOI needs either a mask or center+radii")
        center = np.asarray(self.center, dtype=float).reshape(3)
        radii = np.asarray(self.radii, dtype=float).reshape(3)
        if np.any(radii <= 0):
            raise InvalidInputError("VOI radii must be > 0")
        center.setflags(write=False)
        radii.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def ellipsoid(cls, center, radii) -> "VOI":
        return cls(center=np.asarray(center, float), radii=np.asarray(radii, float))

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "VOI":
        return cls(mask=mask)

    def voxel_mask(self, dims: Sequence[int], voxel_size) -> np.ndarray:
        """Boolean voxel mask of this VOI on a centered grid."""
        if self.mask is not None:
            if self.mask.shape != tuple(dims):
                raise InvalidInputError("VOI mask shape does not match grid dims")
            return self.mask
        vs = np.asarray(voxel_size, dtype=float)
        if vs.ndim == 0:
            vs = np.repeat(vs, 3)
        centers = grid_centers(tuple(int(d) for d in dims), tuple(vs))
        d2 = np.sum(((centers - self.center) / self.radii) ** 2, axis=1)
        return (d2 <= 1.0).reshape(tuple(dims))

    def to_dict(self) -> dict:
        if self.mask is not None:
            return {"mask_voxels": np.argwhere(self.mask).tolist(), "dims": list(self.mask.shape)}
        return {
            "center_mm": [float(v) for v in self.center],
            "radii_mm": [float(v) for v in self.radii],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VOI":
        if "mask_voxels" in d:
            mask = np.zeros(tuple(d["dims"]), dtype=bool)
            idx = np.asarray(d["mask_voxels"], dtype=int)
            mask[idx[:, 0], idx[:, 1], idx[:, 2]] = True
            return cls(mask=mask)
        return cls.ellipsoid(d["center_mm"], d["radii_mm"])


@dataclass(frozen=True)
class TimeIntensityCurve:
    """Mean linear intensity in a VOI versus time."""

    times: np.ndarray
    values: np.ndarray
    n_voxels: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        n_voxels = np.asarray(self.n_voxels, dtype=int)
        if not (times.shape == values.shape == n_voxels.shape) or times.ndim != 1:
            raise InvalidInputError("times, values and n_voxels must be equal-length 1-D")
        if times.size and np.any(np.diff(times) <= 0):
            raise InvalidInputError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("TIC values must be finite")
        for arr in (times, values, n_voxels):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "n_voxels", n_voxels)

    def __len__(self) -> int:
        return int(self.times.size)

    def slice_time(self, t0: float = -math.inf, t1: float = math.inf) -> "TimeIntensityCurve":
        keep = (self.times >= t0) & (self.times <= t1)
        return TimeIntensityCurve(self.times[keep], self.values[keep], self.n_voxels[keep])


def extract_tic(
    frames: Sequence[VolumeFrame],
    voi: VOI,
    dynamic_range: float = DEFAULT_DYNAMIC_RANGE_DB,
    validity_masks: Sequence[np.ndarray] | None = None,
) -> TimeIntensityCurve:
    """Mean linearized intensity inside the VOI, one sample per frame.

    Invalid/out-of-field voxels (per the optional validity masks) are
    excluded; frames where the VOI has no valid voxels are dropped.
    """
    if not frames:
        raise InsufficientDataError("no frames")
    times = []
    values = []
    counts = []
    voi_mask_cache: dict[tuple, np.ndarray] = {}
    for i, frame in enumerate(frames):
        key = (frame.dims, tuple(frame.voxel_size))
        if key not in voi_mask_cache:
            voi_mask_cache[key] = voi.voxel_mask(frame.dims, frame.voxel_size)
        mask = voi_mask_cache[key]
        if validity_masks is not None:
            mask = mask & validity_masks[i]
        n = int(np.count_nonzero(mask))
        if n == 0:
            continue
        values.append(float(np.mean(linearize(frame.voxels[mask], dynamic_range))))
        times.append(float(frame.timestamp))
        counts.append(n)
    if not times:
        raise EmptyVoiError("VOI selects no valid voxels in any frame")
    return TimeIntensityCurve(np.asarray(times), np.asarray(values), np.asarray(counts))


@dataclass(frozen=True)
class SteadyStateReport:
    """Earliest time the windowed, level-normalized TIC slope is within tolerance."""

    reached: bool
    time_to_steady: float
    window: float
    slope_tolerance: float

    def to_json_row(self) -> dict:
        return {
            "reached": self.reached,
            "time_to_steady_s": None if math.isnan(self.time_to_steady) else self.time_to_steady,
            "window_s": self.window,
            "slope_tolerance": self.slope_tolerance,
        }


def detect_steady_state(
    tic: TimeIntensityCurve,
    window: float = DEFAULT_STEADY_WINDOW_S,
    slope_tolerance: float = DEFAULT_SLOPE_TOLERANCE,
) -> SteadyStateReport:
    """Scan for the first full window whose |slope| <= tolerance * mean level.

    The comparison is kept in product form (|slope| <= tol * level) so an
    all-zero plateau counts as steady rather than dividing by zero.
    """
    if slope_tolerance <= 0:
        raise InvalidInputError("slope tolerance must be > 0")
    t = tic.times
    y = tic.values
    if t.size == 0 or (t[-1] - t[0]) < window:
        raise InsufficientDataError("TIC span is shorter than the detection window")
    for i in range(t.size):
        if t[i] - t[0] < window:
            continue
        in_win = (t >= t[i] - window) & (t <= t[i])
        if np.count_nonzero(in_win) < 3:
            raise InsufficientDataError("fewer than 3 samples in a detection window")
        tw = t[in_win]
        yw = y[in_win]
        tc = tw - tw.mean()
        slope = float(np.dot(tc, yw - yw.mean()) / np.dot(tc, tc))
        level = float(yw.mean())
        if abs(slope) <= slope_tolerance * level:
            return SteadyStateReport(
                reached=True, time_to_steady=float(t[i]), window=window, slope_tolerance=slope_tolerance
            )
    return SteadyStateReport(
        reached=False, time_to_steady=math.nan, window=window, slope_tolerance=slope_tolerance
    )


@dataclass(frozen=True)
class FitResult:
    """Monoexponential replenishment fit I(t) = A (1 - exp(-beta (t - t0)))."""

    A: float
    beta: float
    rms_residual: float
    r_squared: float
    t0: float
    converged: bool = True
    degenerate: bool = False

    @property
    def rBV(self) -> float:
        return self.A

    @property
    def rBF(self) -> float:
        return self.A * self.beta

    def to_json_row(self) -> dict:
        return {
            "A": self.A,
            "beta_per_s": self.beta,
            "rBV": self.rBV,
            "rBF": self.rBF,
            "rms_residual": self.rms_residual,
            "r_squared": self.r_squared,
            "t0_s": self.t0,
            "converged": self.converged,
            "degenerate": self.degenerate,
        }


def _projected_sse(beta: float, dt: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Best-scale residual for a fixed beta: A is the closed-form projection."""
    phi = 1.0 - np.exp(-beta * dt)
    denom = float(np.dot(phi, phi))
    if denom == 0.0:
        a = 0.0
    else:
        a = max(0.0, float(np.dot(phi, y)) / denom)
    r = y - a * phi
    return float(np.dot(r, r)), a


def fit_replenishment(
    tic: TimeIntensityCurve,
    min_span: float = DEFAULT_MIN_FIT_SPAN_S,
    beta_bracket: tuple[float, float] = DEFAULT_BETA_BRACKET,
    t0: float | None = None,
    grid_points: int = 64,
) -> FitResult:
    """Fit the replenishment segment by variable projection.

    For each candidate beta the scale A is the closed-form least-squares
    projection; beta itself is found by a log-spaced grid scan followed by
    golden-section refinement of the bracketing interval to 1e-8 relative
    width. A best fit pinned at a bracket edge is flagged as non-converged.
    """
    t = tic.times
    y = tic.values
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(t)):
        raise InvalidInputError("non-finite values in fit segment")
    if t.size < 8:
        raise InsufficientDataError("replenishment fit needs >= 8 samples")
    if (t[-1] - t[0]) < min_span:
        raise InsufficientDataError(
            f"segment spans {t[-1] - t[0]:.1f} s; needs >= {min_span:.1f} s"
        )
    start = float(t[0]) if t0 is None else float(t0)
    dt = t - start

    if np.all(y == 0.0):
        return FitResult(A=0.0, beta=0.0, rms_residual=0.0, r_squared=0.0, t0=start, degenerate=True)

    lo, hi = beta_bracket
    if not (0.0 < lo < hi):
        raise InvalidInputError("beta bracket must satisfy 0 < lo < hi")
    grid = np.geomspace(lo, hi, grid_points)
    sses = np.array([_projected_sse(b, dt, y)[0] for b in grid])
    k = int(np.argmin(sses))
    best_beta = float(grid[k])
    best_sse = float(sses[k])

    a = math.log(grid[max(k - 1, 0)])
    b = math.log(grid[min(k + 1, grid_points - 1)])
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, _ = _projected_sse(math.exp(x1), dt, y)
    f2, _ = _projected_sse(math.exp(x2), dt, y)
    while (b - a) > 1e-8:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1, _ = _projected_sse(math.exp(x1), dt, y)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2, _ = _projected_sse(math.exp(x2), dt, y)
        mid = math.exp(0.5 * (a + b))
        sse_mid, _ = _projected_sse(mid, dt, y)
        if sse_mid < best_sse:
            best_sse, best_beta = sse_mid, mid

    sse, amp = _projected_sse(best_beta, dt, y)
    converged = not (k == 0 or k == grid_points - 1)
    y_mean = float(np.mean(y))
    ss_tot = float(np.sum((y - y_mean) ** 2))
    degenerate = ss_tot == 0.0
    r2 = 0.0 if degenerate else 1.0 - sse / ss_tot
    return FitResult(
        A=amp,
        beta=best_beta,
        rms_residual=math.sqrt(sse / t.size),
        r_squared=r2,
        t0=start,
        converged=converged,
        degenerate=degenerate,
    )


def split_replenishment_segments(
    tic: TimeIntensityCurve,
    flash_times: Sequence[float],
    min_span: float = DEFAULT_MIN_FIT_SPAN_S,
) -> list[tuple[float, TimeIntensityCurve]]:
    """Per-flash fit segments: from the first sample after each flash until
    the next flash (or the end of the curve). Segments shorter than min_span
    are returned as-is; the fit itself enforces the span."""
    flashes = sorted(float(f) for f in flash_times)
    segments = []
    for i, tf in enumerate(flashes):
        t_end = flashes[i + 1] if i + 1 < len(flashes) else math.inf
        seg = tic.slice_time(np.nextafter(tf, math.inf), np.nextafter(t_end, -math.inf))
        segments.append((tf, seg))
    return segments
