"""Desk-scale workbench for tracked 4D contrast-enhanced ultrasound.

Core pieces: rigid pose algebra with hand-eye calibration (geometry),
simulated operator/patient motion (motion), a synthetic contrast phantom
(phantom), the TIC quantification pipeline (quant), pose-based 4D
re-alignment (realign), performance/repeatability metrics (metrics), the
binary session protocol with record/replay and a broadcast server (stream),
experiment orchestration (experiments), and an HTTP/WebSocket service
(service) with the `sononav` CLI on top.
"""

from .errors import SononavError
from .geometry import (
    Calibration,
    MotionPair,
    RigidTransform,
    TrackedSample,
    hand_eye_calibrate,
    motion_pairs_from_stations,
    reject_samples,
    self_consistency_error,
    transform_point,
)
from .metrics import (
    DisplacementTrace,
    HistogramFeatures,
    RepeatabilityResult,
    RepositioningResult,
    classify_agreement,
    displacement_trace,
    histogram_features,
    icc_pairs,
    repositioning_result,
)
from .motion import MotionModel, TrackerNoise, generate_session, measure_tracker, sample_motion
from .phantom import (
    Kinetics,
    Phantom,
    Tissue,
    TissueKinetics,
    VolumeFrame,
    build_phantom,
    intensity_at,
    log_compress,
    render_frame,
)
from .quant import (
    VOI,
    FitResult,
    SteadyStateReport,
    TimeIntensityCurve,
    detect_steady_state,
    extract_tic,
    fit_replenishment,
    linearize,
)
from .realign import AlignedSequence, realign_frame, realign_sequence
from .session import SessionConfig, SessionSource, build_session_messages

__version__ = "0.1.0"

__all__ = [
    "SononavError",
    "Calibration",
    "MotionPair",
    "RigidTransform",
    "TrackedSample",
    "hand_eye_calibrate",
    "motion_pairs_from_stations",
    "reject_samples",
    "self_consistency_error",
    "transform_point",
    "DisplacementTrace",
    "HistogramFeatures",
    "RepeatabilityResult",
    "RepositioningResult",
    "classify_agreement",
    "displacement_trace",
    "histogram_features",
    "icc_pairs",
    "repositioning_result",
    "MotionModel",
    "TrackerNoise",
    "generate_session",
    "measure_tracker",
    "sample_motion",
    "Kinetics",
    "Phantom",
    "Tissue",
    "TissueKinetics",
    "VolumeFrame",
    "build_phantom",
    "intensity_at",
    "log_compress",
    "render_frame",
    "VOI",
    "FitResult",
    "SteadyStateReport",
    "TimeIntensityCurve",
    "detect_steady_state",
    "extract_tic",
    "fit_replenishment",
    "linearize",
    "AlignedSequence",
    "realign_frame",
    "realign_sequence",
    "SessionConfig",
    "SessionSource",
    "build_session_messages",
    "__version__",
]
