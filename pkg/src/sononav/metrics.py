"""Operator-performance metrics and repeatability statistics.

Displacement traces follow a chosen image voxel through the pose stream;
repeatability of paired measurements uses a one-way random-effects ICC on
log-transformed values with a Shrout-Fleiss F-interval.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import f as f_dist

from .errors import InsufficientDataError, InvalidInputError
from .geometry import RigidTransform

AGREEMENT_BANDS = ("none", "poor", "moderate", "good", "excellent")

DEFAULT_SETTLE_THRESHOLD_MM = 2.0
DEFAULT_SETTLE_HOLD_S = 2.0


@dataclass(frozen=True)
class DisplacementTrace:
    """Distance of a tracked image point from its reference position over time."""

    times: np.ndarray
    displacement: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        disp = np.asarray(self.displacement, dtype=float)
        if times.shape != disp.shape or times.ndim != 1:
            raise InvalidInputError("times and displacement must be equal-length 1-D")
        if np.any(disp < 0):
            raise InvalidInputError("displacement must be >= 0")
        times.setflags(write=False)
        disp.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "displacement", disp)

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class HistogramFeatures:
    mean: float
    median: float
    sd: float
    skewness: float
    degenerate: bool = False


@dataclass(frozen=True)
class RepositioningResult:
    error: float
    time_to_recovery: float
    settled: bool


@dataclass(frozen=True)
class RepeatabilityResult:
    icc: float
    ci95: tuple[float, float]
    band: str
    n_pairs: int

    def __post_init__(self) -> None:
        lo, hi = self.ci95
        if not lo <= self.icc <= hi:
            raise InvalidInputError("confidence interval must contain the estimate")


def displacement_trace(
    poses: Sequence[tuple[float, RigidTransform]],
    reference: RigidTransform,
    center_voxel_offset: Sequence[float] = (0.0, 0.0, 0.0),
) -> DisplacementTrace:
    """d(t) = || T_t c - T_ref c || for the image-frame point c."""
    if not poses:
        raise InsufficientDataError("no poses")
    c = np.asarray(center_voxel_offset, dtype=float).reshape(3)
    ref_point = reference.apply(c)
    times = np.array([t for t, _ in poses], dtype=float)
    disp = np.array([np.linalg.norm(pose.apply(c) - ref_point) for _, pose in poses])
    return DisplacementTrace(times=times, displacement=disp)


def histogram_features(trace: DisplacementTrace | np.ndarray) -> HistogramFeatures:
    """Mean/median/SD/skewness of the displacement distribution.

    SD uses the n-1 denominator; skewness is the adjusted Fisher-Pearson
    G1 = g1 * sqrt(n (n-1)) / (n-2). A zero-variance sample reports
    skewness 0 with the degenerate flag set.
    """
    x = trace.displacement if isinstance(trace, DisplacementTrace) else np.asarray(trace, float)
    n = x.size
    if n < 3:
        raise InsufficientDataError("histogram features need >= 3 samples")
    mean = float(np.mean(x))
    median = float(np.median(x))
    sd = float(np.std(x, ddof=1))
    m2 = float(np.mean((x - mean) ** 2))
    if m2 == 0.0:
        return HistogramFeatures(mean=mean, median=median, sd=0.0, skewness=0.0, degenerate=True)
    m3 = float(np.mean((x - mean) ** 3))
    g1 = m3 / m2**1.5
    skew = g1 * math.sqrt(n * (n - 1)) / (n - 2)
    return HistogramFeatures(mean=mean, median=median, sd=sd, skewness=skew)


def repositioning_result(
    trace: DisplacementTrace,
    settle_threshold: float = DEFAULT_SETTLE_THRESHOLD_MM,
    hold: float = DEFAULT_SETTLE_HOLD_S,
) -> RepositioningResult:
    """First time the displacement stays under the threshold for `hold` seconds.

    The reported error is the mean displacement over that hold window.
    """
    t = trace.times
    d = trace.displacement
    if t.size and hold >= (t[-1] - t[0]):
        raise InvalidInputError("hold must be shorter than the trace span")
    below = d <= settle_threshold
    for i in range(t.size):
        if not below[i]:
            continue
        in_hold = (t >= t[i]) & (t <= t[i] + hold)
        if np.all(below[in_hold]) and t[in_hold][-1] - t[i] >= hold - 1e-12:
            return RepositioningResult(
                error=float(np.mean(d[in_hold])),
                time_to_recovery=float(t[i] - t[0]),
                settled=True,
            )
    return RepositioningResult(error=math.nan, time_to_recovery=math.nan, settled=False)


def classify_agreement(icc: float) -> str:
    """Agreement band: 0-0.20 none, 0.21-0.40 poor, 0.41-0.60 moderate,
    0.61-0.80 good, above 0.80 excellent. Negative values report none."""
    if not math.isfinite(icc):
        raise InvalidInputError("ICC must be finite")
    if icc <= 0.20:
        return "none"
    if icc <= 0.40:
        return "poor"
    if icc <= 0.60:
        return "moderate"
    if icc <= 0.80:
        return "good"
    return "excellent"


def icc_pairs(
    pairs: Sequence[tuple[float, float]],
    confidence: float = 0.95,
    log_transform: bool = True,
) -> RepeatabilityResult:
    """One-way random-effects ICC(1,1) of paired measurements.

    Values are natural-log transformed by default (they must then be
    positive). For k = 2 the estimate reduces to (MSB - MSW)/(MSB + MSW);
    the CI is the Shrout-Fleiss F-distribution interval.
    """
    if len(pairs) < 3:
        raise InsufficientDataError("ICC needs >= 3 pairs")
    y = np.asarray(pairs, dtype=float)
    if y.ndim != 2 or y.shape[1] != 2:
        raise InvalidInputError("pairs must be (n, 2)")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("measurements must be finite")
    if log_transform:
        if np.any(y <= 0):
            raise InvalidInputError("log transform requires positive measurements")
        y = np.log(y)

    n, k = y.shape
    grand = y.mean()
    subject_means = y.mean(axis=1)
    msb = k * float(np.sum((subject_means - grand) ** 2)) / (n - 1)
    msw = float(np.sum((y - subject_means[:, None]) ** 2)) / (n * (k - 1))

    if msw == 0.0 and msb == 0.0:
        icc, lo, hi = 1.0, 1.0, 1.0
    elif msw == 0.0:
        icc, lo, hi = 1.0, 1.0, 1.0
    else:
        icc = (msb - msw) / (msb + (k - 1) * msw)
        alpha = 1.0 - confidence
        df1 = n - 1
        df2 = n * (k - 1)
        f_obs = msb / msw
        fl = f_obs / f_dist.ppf(1.0 - alpha / 2.0, df1, df2)
        fu = f_obs * f_dist.ppf(1.0 - alpha / 2.0, df2, df1)
        lo = (fl - 1.0) / (fl + (k - 1.0))
        hi = (fu - 1.0) / (fu + (k - 1.0))
        lo = min(lo, icc)
        hi = max(hi, icc)
    return RepeatabilityResult(
        icc=float(icc),
        ci95=(float(lo), float(hi)),
        band=classify_agreement(float(icc)),
        n_pairs=n,
    )
