"""Session assembly: a config document plus generators that turn the phantom,
motion model and tracker into a timestamped message stream.

Frames are rendered from the probe's true pose but stamped with the measured
tracker pose (or no pose at all during dropout), which is exactly what the
re-alignment stage has to work from.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError
from .geometry import RigidTransform
from .motion import MotionModel, MotionTrajectory, TrackerNoise, measure_tracker
from .phantom import (
    DEFAULT_DYNAMIC_RANGE_DB,
    Kinetics,
    Phantom,
    VolumeFrame,
    phantom_from_spec,
    render_frame,
)
from .quant import VOI
from .stream.codec import ControlMessage, FrameMessage, Message, TrackerMessage

FEEDBACK_MODES = ("bmode", "tracked", "blind")


@dataclass(frozen=True)
class SessionConfig:
    """Everything needed to reproduce one simulated acquisition."""

    seed: int = 0
    duration_s: float = 480.0
    frame_rate_hz: float = 1.0
    dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB
    noise_sd: float = 0.05
    flash_times_s: tuple[float, ...] = ()
    feedback_mode: str = "tracked"
    reference_capture_s: float = 0.0
    infusion_start_s: float = 0.0
    phantom_spec: dict = field(default_factory=dict)
    motion: MotionModel = field(default_factory=lambda: MotionModel(kind="breathing"))
    tracker: TrackerNoise = field(default_factory=TrackerNoise)
    voi: VOI | None = None

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ConfigError("duration must be > 0")
        if self.frame_rate_hz <= 0:
            raise ConfigError("frame rate must be > 0")
        if self.feedback_mode not in FEEDBACK_MODES:
            raise ConfigError(f"feedback_mode must be one of {FEEDBACK_MODES}")
        for t in self.flash_times_s:
            if not 0.0 <= t <= self.duration_s:
                raise ConfigError(f"flash time {t} outside the session")
        object.__setattr__(self, "flash_times_s", tuple(float(t) for t in self.flash_times_s))

    def build_phantom(self) -> tuple[Phantom, Kinetics]:
        return phantom_from_spec(self.phantom_spec)

    def to_dict(self) -> dict:
        doc = {
            "seed": self.seed,
            "duration_s": self.duration_s,
            "frame_rate_hz": self.frame_rate_hz,
            "dynamic_range_db": self.dynamic_range_db,
            "noise_sd": self.noise_sd,
            "flash_times_s": list(self.flash_times_s),
            "feedback_mode": self.feedback_mode,
            "reference_capture_s": self.reference_capture_s,
            "infusion_start_s": self.infusion_start_s,
            "phantom": self.phantom_spec,
            "motion": {
                "kind": self.motion.kind,
                "drift_rate_mm_per_min": self.motion.drift_rate,
                "jitter_sd_mm": self.motion.jitter_sd,
                "breathing_amplitude_mm": self.motion.breathing_amplitude,
                "breathing_period_s": self.motion.breathing_period,
                "rot_jitter_sd_deg": self.motion.rot_jitter_sd,
                "seed": self.motion.seed,
            },
            "tracker": {
                "trans_sd_mm": self.tracker.trans_sd,
                "rot_sd_deg": self.tracker.rot_sd,
                "dropout_prob": self.tracker.dropout_prob,
                "rate_hz": self.tracker.rate,
            },
        }
        if self.voi is not None:
            doc["voi"] = self.voi.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionConfig":
        try:
            motion_doc = doc.get("motion", {})
            tracker_doc = doc.get("tracker", {})
            return cls(
                seed=int(doc.get("seed", 0)),
                duration_s=float(doc.get("duration_s", 480.0)),
                frame_rate_hz=float(doc.get("frame_rate_hz", 1.0)),
                dynamic_range_db=float(doc.get("dynamic_range_db", DEFAULT_DYNAMIC_RANGE_DB)),
                noise_sd=float(doc.get("noise_sd", 0.05)),
                flash_times_s=tuple(doc.get("flash_times_s", ())),
                feedback_mode=doc.get("feedback_mode", "tracked"),
                reference_capture_s=float(doc.get("reference_capture_s", 0.0)),
                infusion_start_s=float(doc.get("infusion_start_s", 0.0)),
                phantom_spec=doc.get("phantom", {}),
                motion=MotionModel(
                    kind=motion_doc.get("kind", "breathing"),
                    drift_rate=float(motion_doc.get("drift_rate_mm_per_min", 0.0)),
                    jitter_sd=float(motion_doc.get("jitter_sd_mm", 0.0)),
                    breathing_amplitude=float(motion_doc.get("breathing_amplitude_mm", 0.0)),
                    breathing_period=float(motion_doc.get("breathing_period_s", 4.0)),
                    rot_jitter_sd=float(motion_doc.get("rot_jitter_sd_deg", 0.0)),
                    seed=int(motion_doc.get("seed", doc.get("seed", 0))),
                ),
                tracker=TrackerNoise(
                    trans_sd=float(tracker_doc.get("trans_sd_mm", 0.0)),
                    rot_sd=float(tracker_doc.get("rot_sd_deg", 0.0)),
                    dropout_prob=float(tracker_doc.get("dropout_prob", 0.0)),
                    rate=float(tracker_doc.get("rate_hz", 60.0)),
                ),
                voi=VOI.from_dict(doc["voi"]) if "voi" in doc else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad session config: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_file(cls, path) -> "SessionConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        ).hexdigest()


def session_header(config: SessionConfig, aligned: bool = False) -> dict:
    header = {
        "protocol_version": 1,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "phantom_digest": hashlib.sha256(
            json.dumps(config.phantom_spec, sort_keys=True).encode("utf-8")
        ).hexdigest(),
    }
    if aligned:
        header["aligned"] = True
    return header


def _us(t: float) -> int:
    return int(round(t * 1e6))


class SessionSource:
    """Deterministic message generator for one configured session.

    Also usable live: control messages arriving through handle_control()
    append flashes, move the reference capture, or switch the feedback mode,
    all taking effect from the current session time forward.
    """

    def __init__(self, config: SessionConfig):
        self.config = config
        self.phantom, self.kinetics = config.build_phantom()
        self.flash_times: list[float] = sorted(config.flash_times_s)
        # live-injected flashes land in flash_times for rendering but are
        # echoed through the pending-control path, not the schedule below
        self._scheduled_flashes: tuple[float, ...] = tuple(self.flash_times)
        self.feedback_mode = config.feedback_mode
        self._trajectory = MotionTrajectory(config.motion)
        self._meas_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))
        self._frame_seed = np.random.SeedSequence((config.seed, 3))
        self.session_time = 0.0
        self._pending_controls: list[ControlMessage] = []
        self._last_measured: RigidTransform | None = None

    def true_pose(self, t: float) -> RigidTransform:
        return self._trajectory.at(t)

    def handle_control(self, msg: ControlMessage) -> None:
        """Apply an upstream control event at the current session time."""
        now = self.session_time
        if msg.event == "flash":
            self.flash_times.append(now)
            self.flash_times.sort()
        elif msg.event == "feedback_mode":
            mode = msg.param("mode", "tracked")
            if mode in FEEDBACK_MODES:
                self.feedback_mode = mode
        # capture_reference and infusion markers are session bookkeeping;
        # echo them downstream so subscribers and the recording see them
        self._pending_controls.append(
            ControlMessage(timestamp_us=_us(now), event=msg.event, params=msg.params)
        )

    def messages(self) -> Iterator[Message]:
        """All session messages in timestamp order."""
        cfg = self.config
        yield ControlMessage(
            timestamp_us=_us(0.0), event="feedback_mode", params=(("mode", self.feedback_mode),)
        )
        n_track = int(round(cfg.duration_s * cfg.tracker.rate))
        frame_interval = 1.0 / cfg.frame_rate_hz
        next_frame_t = 0.0
        frame_index = 0
        reference_sent = False
        infusion_sent = False
        flashes_sent = 0

        for k in range(n_track):
            t = k / cfg.tracker.rate
            self.session_time = t

            while self._pending_controls:
                yield self._pending_controls.pop(0)

            if not infusion_sent and t >= cfg.infusion_start_s:
                yield ControlMessage(timestamp_us=_us(t), event="infusion_start")
                infusion_sent = True

            while (
                flashes_sent < len(self._scheduled_flashes)
                and self._scheduled_flashes[flashes_sent] <= t
            ):
                yield ControlMessage(
                    timestamp_us=_us(self._scheduled_flashes[flashes_sent]), event="flash"
                )
                flashes_sent += 1

            true_pose = self.true_pose(t)
            sample = measure_tracker(true_pose, cfg.tracker, self._meas_rng, timestamp=t)
            if sample is None:
                yield TrackerMessage(timestamp_us=_us(t), pose=None, quality=0.0, dropout=True)
                measured = None
            else:
                measured = sample.marker_pose
                self._last_measured = measured
                yield TrackerMessage(
                    timestamp_us=_us(t), pose=measured, quality=sample.quality, dropout=False
                )

            # reference capture follows the tracker sample of its tick so a
            # console folding the stream has a live pose to capture
            if not reference_sent and t >= cfg.reference_capture_s and measured is not None:
                yield ControlMessage(timestamp_us=_us(t), event="capture_reference")
                reference_sent = True

            if t >= next_frame_t - 1e-9:
                frame = self.render_at(t, true_pose, frame_index)
                yield FrameMessage(
                    timestamp_us=_us(t),
                    pose=measured,
                    dims=frame.dims,
                    voxel_size=frame.voxel_size,
                    voxels=frame.voxels,
                )
                frame_index += 1
                next_frame_t += frame_interval

    def render_at(self, t: float, true_pose: RigidTransform, frame_index: int) -> VolumeFrame:
        cfg = self.config
        seed = int(self._frame_seed.generate_state(1)[0] ^ frame_index)
        rel_t = max(0.0, t - cfg.infusion_start_s)
        flashes = [f - cfg.infusion_start_s for f in self.flash_times if f <= t]
        return render_frame(
            self.phantom,
            self.kinetics,
            t=rel_t,
            pose=true_pose,
            noise_sd=cfg.noise_sd,
            flash_times=flashes,
            seed=seed,
            dynamic_range=cfg.dynamic_range_db,
        )


def build_session_messages(config: SessionConfig) -> list[Message]:
    """Materialize the full deterministic message stream for a config."""
    return list(SessionSource(config).messages())


def frames_from_messages(
    messages: Sequence[Message],
) -> tuple[list[VolumeFrame], list[float], list[ControlMessage]]:
    """Split a message stream into volume frames, flash times and controls.

    Frame poses come off the wire; dropout frames carry pose None.
    """
    frames: list[VolumeFrame] = []
    flashes: list[float] = []
    controls: list[ControlMessage] = []
    for msg in messages:
        if isinstance(msg, FrameMessage):
            frames.append(
                VolumeFrame(
                    timestamp=msg.timestamp_us / 1e6,
                    pose=msg.pose,
                    dims=msg.dims,
                    voxel_size=msg.voxel_size,
                    voxels=msg.voxels,
                )
            )
        elif isinstance(msg, ControlMessage):
            controls.append(msg)
            if msg.event == "flash":
                flashes.append(msg.timestamp_us / 1e6)
    return frames, flashes, controls
