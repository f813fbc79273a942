"""Pydantic request/response models for the service API."""
from __future__ import annotations

from pydantic import BaseModel, Field

from ..geometry import RigidTransform


class PoseModel(BaseModel):
    quaternion: list[float] = Field(min_length=4, max_length=4, description="w, x, y, z")
    translation_mm: list[float] = Field(min_length=3, max_length=3)

    @classmethod
    def from_transform(cls, t: RigidTransform) -> "PoseModel":
        return cls(**t.to_dict())

    def to_transform(self) -> RigidTransform:
        return RigidTransform.from_dict(self.model_dump())


class MotionPairModel(BaseModel):
    image_motion: PoseModel
    marker_motion: PoseModel
    displacement_mm: float | None = None
    quality_mm: float = 0.0


class CalibrationRequest(BaseModel):
    pairs: list[MotionPairModel]
    max_displacement_mm: float | None = None
    max_quality_mm: float | None = None
    lever_arm_mm: float = 50.0


class CalibrationResponse(BaseModel):
    quaternion: list[float]
    translation_mm: list[float]
    rms_error_mm: float
    n_accepted: int
    n_rejected: int


class FitRequest(BaseModel):
    times_s: list[float]
    values: list[float]
    min_span_s: float = 60.0
    t0_s: float | None = None


class FitResponse(BaseModel):
    A: float
    beta_per_s: float
    rBV: float
    rBF: float
    r_squared: float
    rms_residual: float
    t0_s: float
    converged: bool
    degenerate: bool


class SteadyStateRequest(BaseModel):
    times_s: list[float]
    values: list[float]
    window_s: float = 20.0
    slope_tolerance: float = 0.005


class SteadyStateResponse(BaseModel):
    reached: bool
    time_to_steady_s: float | None
    window_s: float
    slope_tolerance: float


class IccRequest(BaseModel):
    pairs: list[tuple[float, float]]
    log_transform: bool = True


class IccResponse(BaseModel):
    icc: float
    ci_lo: float
    ci_hi: float
    band: str
    n_pairs: int


class SessionCreateRequest(BaseModel):
    config: dict
    max_speed: bool = False
    endpoint: str = "127.0.0.1:0"
    min_subscribers: int = 0


class ControlRequest(BaseModel):
    event: str
    params: dict[str, str] = Field(default_factory=dict)


class SessionInfo(BaseModel):
    id: str
    tcp_port: int
    config_digest: str
    feedback_mode: str
    flash_times_s: list[float]
    n_subscribers: int
    messages_published: int
    finished: bool
    voi: dict | None = None
    dynamic_range_db: float
    steady_window_s: float = 20.0
    steady_slope_tolerance: float = 0.005


class ErrorResponse(BaseModel):
    detail: str
