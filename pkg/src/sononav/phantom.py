"""Synthetic 4D contrast phantom: labeled tissue compartments with infusion
and disruption-replenishment kinetics, rendered to compressed 8-bit volumes.

Image and phantom grids share one convention: voxel (i, j, k) is centered at
(index - (dims - 1)/2) * voxel_size in the grid's local frame, so the grid is
centered on its local origin.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError
from .geometry import RigidTransform

DEFAULT_DYNAMIC_RANGE_DB = 60.0


class Tissue(IntEnum):
    BACKGROUND = 0
    PARENCHYMA = 1
    LESION = 2
    VESSEL = 3


TISSUE_NAMES = {t.name.lower(): t for t in Tissue}


@dataclass(frozen=True)
class TissueKinetics:
    """Infusion and replenishment parameters for one tissue compartment.

    `replenishment_plateau` is the post-flash asymptote under a fully
    steady-state infusion; it defaults to (and may not exceed) the steady
    level, in which case replenishment returns exactly to the pre-flash value.
    """

    steady_level: float
    infusion_tau: float
    replenishment_beta: float
    replenishment_plateau: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.steady_level <= 1.0:
            raise ConfigError("steady_level must be in (0, 1]")
        if self.infusion_tau <= 0 or self.replenishment_beta <= 0:
            raise ConfigError("infusion_tau and replenishment_beta must be > 0")
        if self.replenishment_plateau is None:
            object.__setattr__(self, "replenishment_plateau", self.steady_level)
        if not 0.0 < self.replenishment_plateau <= self.steady_level:
            raise ConfigError("replenishment_plateau must be in (0, steady_level]")

    def to_dict(self) -> dict:
        return {
            "steady_level": self.steady_level,
            "infusion_tau_s": self.infusion_tau,
            "replenishment_beta_per_s": self.replenishment_beta,
            "replenishment_plateau": self.replenishment_plateau,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TissueKinetics":
        return cls(
            steady_level=float(d["steady_level"]),
            infusion_tau=float(d["infusion_tau_s"]),
            replenishment_beta=float(d["replenishment_beta_per_s"]),
            replenishment_plateau=(
                None if d.get("replenishment_plateau") is None else float(d["replenishment_plateau"])
            ),
        )


@dataclass(frozen=True)
class Kinetics:
    """Per-tissue kinetics table."""

    tissues: Mapping[int, TissueKinetics]

    def for_tissue(self, tissue: int) -> TissueKinetics:
        try:
            return self.tissues[int(tissue)]
        except KeyError:
            raise InvalidInputError(f"unknown tissue id {tissue}") from None

    @classmethod
    def default(cls) -> "Kinetics":
        # tau values are stand-ins: vessel fastest, parenchyma intermediate,
        # lesion slowest and varied per virtual patient by the harness
        return cls(
            tissues={
                Tissue.BACKGROUND: TissueKinetics(0.001, 1.0, 1.0),
                Tissue.PARENCHYMA: TissueKinetics(0.35, 60.0, 0.6),
                Tissue.LESION: TissueKinetics(0.6, 80.0, 0.5),
                Tissue.VESSEL: TissueKinetics(0.9, 20.0, 1.2),
            }
        )

    def with_tissue(self, tissue: int, kin: TissueKinetics) -> "Kinetics":
        tissues = dict(self.tissues)
        tissues[int(tissue)] = kin
        return Kinetics(tissues=tissues)

    def to_dict(self) -> dict:
        return {Tissue(t).name.lower(): k.to_dict() for t, k in sorted(self.tissues.items())}

    @classmethod
    def from_dict(cls, d: Mapping[str, dict]) -> "Kinetics":
        tissues = {}
        for name, kd in d.items():
            if name not in TISSUE_NAMES:
                raise ConfigError(f"unknown tissue name {name!r}")
            tissues[TISSUE_NAMES[name]] = TissueKinetics.from_dict(kd)
        return cls(tissues=tissues)


def intensity_at(
    kinetics: Kinetics,
    tissue: int,
    t: float,
    flash_times: Sequence[float] = (),
) -> float:
    """Linear contrast intensity of a tissue at time t under the flash history.

    Infusion approaches the steady level as 1 - exp(-t/tau). A flash zeroes
    the in-volume signal instantly; replenishment then grows back toward the
    pre-flash level (scaled by plateau/steady_level) as 1 - exp(-beta dt).
    """
    if t < 0:
        raise InvalidInputError("time must be >= 0")
    tk = kinetics.for_tissue(tissue)
    past = sorted({float(f) for f in flash_times if 0.0 <= f <= t})
    return _level(tk, t, past)


def _level(tk: TissueKinetics, t: float, past_flashes: list[float]) -> float:
    if not past_flashes:
        return tk.steady_level * (1.0 - math.exp(-t / tk.infusion_tau))
    tf = past_flashes[-1]
    pre = _level(tk, tf, [f for f in past_flashes[:-1] if f < tf])
    scale = tk.replenishment_plateau / tk.steady_level
    return pre * scale * (1.0 - math.exp(-tk.replenishment_beta * (t - tf)))


def log_compress(intensity, dynamic_range: float = DEFAULT_DYNAMIC_RANGE_DB):
    """Map linear intensity in (0, 1] to an 8-bit code over the dB range.

    v = round_half_up(255 * clamp((20 log10 I + D) / D, 0, 1)); non-positive
    intensities map to 0.
    """
    if dynamic_range <= 0:
        raise InvalidInputError("dynamic range must be > 0")
    arr = np.asarray(intensity, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.zeros(arr.shape, dtype=np.uint8)
    pos = arr > 0
    if np.any(pos):
        db = 20.0 * np.log10(arr[pos])
        frac = np.clip((db + dynamic_range) / dynamic_range, 0.0, 1.0)
        out[pos] = np.floor(255.0 * frac + 0.5).astype(np.uint8)
    return int(out[0]) if scalar else out


@dataclass(frozen=True)
class VolumeFrame:
    """Timestamped 3D voxel grid of compressed intensities with its pose.

    `pose` maps image coordinates to world coordinates; None marks a frame
    whose pose was lost to tracker dropout.
    """

    timestamp: float
    pose: RigidTransform | None
    dims: tuple[int, int, int]
    voxel_size: np.ndarray
    voxels: np.ndarray

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        vs = _as_voxel_size(self.voxel_size)
        vox = np.asarray(self.voxels)
        if vox.dtype != np.uint8:
            raise InvalidInputError("voxels must be 8-bit codes")
        if vox.shape != dims:
            raise InvalidInputError(f"voxel shape {vox.shape} != dims {dims}")
        vox.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "voxels", vox)

    def voxel_centers_mm(self) -> np.ndarray:
        """(N, 3) voxel centers in the image frame, C-order flattened."""
        return grid_centers(self.dims, tuple(self.voxel_size))


def _as_voxel_size(voxel_size) -> np.ndarray:
    vs = np.asarray(voxel_size, dtype=float)
    if vs.ndim == 0:
        vs = np.repeat(vs, 3)
    if vs.shape != (3,) or np.any(vs <= 0):
        raise InvalidInputError("voxel_size must be a positive scalar or 3-vector")
    return vs


@lru_cache(maxsize=8)
def grid_centers(dims: tuple[int, int, int], voxel_size: tuple[float, float, float]) -> np.ndarray:
    """Voxel-center coordinates (mm) of a centered grid, C-order flattened."""
    axes = [
        (np.arange(d) - (d - 1) / 2.0) * s for d, s in zip(dims, voxel_size)
    ]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    pts.setflags(write=False)
    return pts


def mm_to_grid(points: np.ndarray, dims: Sequence[int], voxel_size: np.ndarray) -> np.ndarray:
    """Continuous grid indices of points given in the grid's local frame."""
    dims = np.asarray(dims, dtype=float)
    return points / np.asarray(voxel_size, float) + (dims - 1) / 2.0


@dataclass(frozen=True)
class Phantom:
    """Labeled tissue map on a regular grid, positioned in world coordinates."""

    dims: tuple[int, int, int]
    voxel_size: np.ndarray
    labels: np.ndarray
    world_pose: RigidTransform

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        vs = _as_voxel_size(self.voxel_size)
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.shape != dims:
            raise InvalidInputError("labels must cover the grid")
        lesion_idx = np.argwhere(labels == Tissue.LESION)
        if lesion_idx.size == 0:
            raise ConfigError("phantom must contain a lesion")
        extent = (lesion_idx.max(axis=0) - lesion_idx.min(axis=0) + 1) * vs
        if float(np.max(extent)) < 10.0:
            raise ConfigError("lesion must be >= 1 cm in diameter")
        labels.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "labels", labels)


def build_phantom(
    dims: Sequence[int] = (64, 64, 64),
    voxel_size=1.0,
    lesion_center: Sequence[float] = (0.0, 0.0, 8.0),
    lesion_radii: Sequence[float] = (9.0, 8.0, 8.0),
    vessel_center: Sequence[float] = (0.0, -14.0, -10.0),
    vessel_radius: float = 4.0,
    vessel_axis: int = 0,
    margin_mm: float = 4.0,
    world_pose: RigidTransform | None = None,
) -> Phantom:
    """Default liver-like phantom: parenchyma block with an ellipsoidal lesion
    and a cylindrical vessel, surrounded by a background margin."""
    dims = tuple(int(d) for d in dims)
    vs = _as_voxel_size(voxel_size)
    centers = grid_centers(dims, tuple(vs))
    labels = np.full(dims, Tissue.PARENCHYMA, dtype=np.uint8)

    half = (np.asarray(dims) - 1) / 2.0 * vs
    inside = np.all(np.abs(centers) <= (half - margin_mm), axis=1)
    labels.reshape(-1)[~inside] = Tissue.BACKGROUND

    lesion_center = np.asarray(lesion_center, float)
    lesion_radii = np.asarray(lesion_radii, float)
    if np.any(lesion_radii <= 0):
        raise ConfigError("lesion radii must be > 0")
    d2 = np.sum(((centers - lesion_center) / lesion_radii) ** 2, axis=1)
    labels.reshape(-1)[(d2 <= 1.0) & inside] = Tissue.LESION

    vessel_center = np.asarray(vessel_center, float)
    radial = np.delete(centers - vessel_center, vessel_axis, axis=1)
    r2 = np.sum(radial**2, axis=1)
    labels.reshape(-1)[(r2 <= vessel_radius**2) & inside] = Tissue.VESSEL

    return Phantom(
        dims=dims,
        voxel_size=vs,
        labels=labels,
        world_pose=world_pose if world_pose is not None else RigidTransform.identity(),
    )


def phantom_from_spec(spec: Mapping) -> tuple[Phantom, Kinetics]:
    """Build a phantom and kinetics table from a JSON-style document."""
    kwargs = {}
    for key in (
        "dims",
        "voxel_size",
        "lesion_center",
        "lesion_radii",
        "vessel_center",
        "vessel_radius",
        "vessel_axis",
        "margin_mm",
    ):
        if key in spec:
            kwargs[key] = spec[key]
    if "world_pose" in spec:
        kwargs["world_pose"] = RigidTransform.from_dict(spec["world_pose"])
    phantom = build_phantom(**kwargs)
    kinetics = (
        Kinetics.from_dict(spec["kinetics"]) if "kinetics" in spec else Kinetics.default()
    )
    return phantom, kinetics


def phantom_spec_to_json(spec: Mapping) -> str:
    return json.dumps(spec, indent=2, sort_keys=True)


def render_frame(
    phantom: Phantom,
    kinetics: Kinetics,
    t: float,
    pose: RigidTransform | None = None,
    noise_sd: float = 0.0,
    flash_times: Sequence[float] = (),
    seed: int = 0,
    dims: Sequence[int] | None = None,
    voxel_size=None,
    dynamic_range: float = DEFAULT_DYNAMIC_RANGE_DB,
) -> VolumeFrame:
    """Render the phantom as seen by a probe at `pose` (image -> world).

    Each image voxel center is mapped into the phantom grid (nearest
    neighbor), its tissue's kinetic intensity is evaluated at t, multiplicative
    Gaussian speckle of fractional SD `noise_sd` is applied, and the result is
    log-compressed. Voxels outside the phantom read background.
    """
    if noise_sd < 0:
        raise InvalidInputError("noise_sd must be >= 0")
    pose = pose if pose is not None else RigidTransform.identity()
    out_dims = tuple(int(d) for d in (dims if dims is not None else phantom.dims))
    out_vs = _as_voxel_size(voxel_size if voxel_size is not None else phantom.voxel_size)

    centers = grid_centers(out_dims, tuple(out_vs))
    world = pose.apply(centers)
    local = phantom.world_pose.invert().apply(world)
    grid = mm_to_grid(local, phantom.dims, phantom.voxel_size)
    nearest = np.floor(grid + 0.5).astype(np.int64)
    in_bounds = np.all((nearest >= 0) & (nearest < np.asarray(phantom.dims)), axis=1)

    labels = np.full(centers.shape[0], Tissue.BACKGROUND, dtype=np.uint8)
    nb = nearest[in_bounds]
    labels[in_bounds] = phantom.labels[nb[:, 0], nb[:, 1], nb[:, 2]]

    lut = np.zeros(int(max(Tissue)) + 1, dtype=float)
    for tissue in np.unique(labels):
        lut[tissue] = intensity_at(kinetics, int(tissue), t, flash_times)
    intensity = lut[labels]

    if noise_sd > 0:
        rng = np.random.default_rng(seed)
        intensity = np.maximum(intensity * (1.0 + noise_sd * rng.standard_normal(intensity.shape)), 0.0)

    codes = log_compress(intensity, dynamic_range).reshape(out_dims)
    return VolumeFrame(
        timestamp=float(t), pose=pose, dims=out_dims, voxel_size=out_vs, voxels=codes
    )
