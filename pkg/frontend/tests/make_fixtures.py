"""Generate cross-language test fixtures from the backend implementation.

Run from the repository root:  python3 frontend/tests/make_fixtures.py
Writes JSON/binary fixtures into frontend/tests/fixtures/ that pin the wire
layout, the displacement formula, and the steady-state rule so the console
cannot drift from the analysis side.
"""
import base64
import json
import math
from pathlib import Path

import numpy as np

from sononav.geometry import RigidTransform
from sononav.metrics import displacement_trace
from sononav.motion import MotionModel, TrackerNoise
from sononav.quant import TimeIntensityCurve, detect_steady_state
from sononav.session import SessionConfig, build_session_messages
from sononav.stream.codec import (
    ControlMessage,
    FrameMessage,
    TrackerMessage,
    encode_message,
)

FIXTURES = Path(__file__).parent / "fixtures"


def b64(msg) -> str:
    return base64.b64encode(encode_message(msg)).decode()


def pose_doc(t: RigidTransform) -> dict:
    return {"quaternion": list(map(float, t.rotation)), "translation": list(map(float, t.translation))}


def message_fixtures() -> None:
    rng = np.random.default_rng(424242)
    pose = RigidTransform.random(rng, max_angle_rad=1.2, max_translation=80.0)
    voxels = rng.integers(0, 256, size=(3, 4, 2), dtype=np.uint8)
    cases = [
        {
            "name": "frame_with_pose",
            "b64": b64(
                FrameMessage(
                    timestamp_us=1_500_000,
                    pose=pose,
                    dims=(3, 4, 2),
                    voxel_size=np.float32([1.0, 1.0, 2.0]),
                    voxels=voxels,
                )
            ),
            "expected": {
                "kind": "frame",
                "timestampUs": 1_500_000,
                "pose": pose_doc(pose),
                "dims": [3, 4, 2],
                "voxelSize": [1.0, 1.0, 2.0],
                "voxels": voxels.reshape(-1).tolist(),
            },
        },
        {
            "name": "frame_no_pose",
            "b64": b64(
                FrameMessage(
                    timestamp_us=2_000_000,
                    pose=None,
                    dims=(2, 2, 2),
                    voxel_size=np.float32([0.5, 0.5, 0.5]),
                    voxels=np.arange(8, dtype=np.uint8).reshape(2, 2, 2),
                )
            ),
            "expected": {
                "kind": "frame",
                "timestampUs": 2_000_000,
                "pose": None,
                "dims": [2, 2, 2],
                "voxelSize": [0.5, 0.5, 0.5],
                "voxels": list(range(8)),
            },
        },
        {
            "name": "tracker",
            "b64": b64(TrackerMessage(timestamp_us=333, pose=pose, quality=0.25, dropout=False)),
            "expected": {
                "kind": "tracker",
                "timestampUs": 333,
                "pose": pose_doc(pose),
                "quality": 0.25,
                "dropout": False,
            },
        },
        {
            "name": "tracker_dropout",
            "b64": b64(TrackerMessage(timestamp_us=334, pose=None, quality=0.0, dropout=True)),
            "expected": {
                "kind": "tracker",
                "timestampUs": 334,
                "pose": None,
                "quality": 0.0,
                "dropout": True,
            },
        },
        {
            "name": "control_flash",
            "b64": b64(ControlMessage(timestamp_us=240_000_000, event="flash")),
            "expected": {
                "kind": "control",
                "timestampUs": 240_000_000,
                "event": "flash",
                "params": [],
            },
        },
        {
            "name": "control_mode",
            "b64": b64(
                ControlMessage(
                    timestamp_us=0, event="feedback_mode", params=(("mode", "blind"),)
                )
            ),
            "expected": {
                "kind": "control",
                "timestampUs": 0,
                "event": "feedback_mode",
                "params": [["mode", "blind"]],
            },
        },
    ]
    (FIXTURES / "messages.json").write_text(json.dumps(cases, indent=2))


def session_fixture() -> None:
    config = SessionConfig(
        seed=21,
        duration_s=50.0,
        frame_rate_hz=1.0,
        noise_sd=0.0,
        flash_times_s=(30.0,),
        phantom_spec={
            "dims": [14, 14, 14],
            "lesion_center": [0, 0, 0],
            "lesion_radii": [5.5, 5.5, 5.5],
            "margin_mm": 0.5,
            "kinetics": {
                "background": {"steady_level": 0.001, "infusion_tau_s": 1.0, "replenishment_beta_per_s": 1.0},
                "parenchyma": {"steady_level": 0.35, "infusion_tau_s": 8.0, "replenishment_beta_per_s": 0.6},
                "lesion": {"steady_level": 0.6, "infusion_tau_s": 6.0, "replenishment_beta_per_s": 0.5},
                "vessel": {"steady_level": 0.9, "infusion_tau_s": 4.0, "replenishment_beta_per_s": 1.2},
            },
        },
        motion=MotionModel(kind="breathing", breathing_amplitude=1.5, breathing_period=4.0, seed=21),
        tracker=TrackerNoise(trans_sd=0.1, rot_sd=0.05, rate=5.0),
    )
    messages = build_session_messages(config)
    blob = b"".join(encode_message(m) for m in messages)
    (FIXTURES / "session.bin").write_bytes(blob)

    reference = None
    live = None
    for msg in messages:
        if isinstance(msg, TrackerMessage) and not msg.dropout:
            live = msg.pose
        elif isinstance(msg, ControlMessage) and msg.event == "capture_reference":
            reference = live
    trace = displacement_trace([(0.0, live)], reference, (0.0, 0.0, 0.0))
    flash_times = [m.timestamp_us / 1e6 for m in messages if isinstance(m, ControlMessage) and m.event == "flash"]
    doc = {
        "n_messages": len(messages),
        "voi": {"center_mm": [0.0, 0.0, 0.0], "radii_mm": [5.5, 5.5, 5.5]},
        "dynamic_range_db": 60.0,
        "final_displacement_mm": float(trace.displacement[0]),
        "flash_times_s": flash_times,
        "feedback_mode": "tracked",
    }
    (FIXTURES / "session.json").write_text(json.dumps(doc, indent=2))


def steady_fixtures() -> None:
    cases = []

    def add(name, times, values, window=20.0, tol=0.005):
        tic = TimeIntensityCurve(np.asarray(times, float), np.asarray(values, float), np.ones(len(times), dtype=int))
        rep = detect_steady_state(tic, window=window, slope_tolerance=tol)
        cases.append(
            {
                "name": name,
                "times": list(map(float, times)),
                "values": list(map(float, values)),
                "window_s": window,
                "slope_tolerance": tol,
                "expected": {
                    "reached": rep.reached,
                    "time_to_steady": None if math.isnan(rep.time_to_steady) else rep.time_to_steady,
                },
            }
        )

    t = np.arange(0.0, 61.0, 1.0)
    add("constant", t, np.full(t.size, 0.5))
    t = np.arange(0.0, 181.0, 1.0)
    add("exponential_tau30", t, 1.0 - np.exp(-t / 30.0))
    t = np.arange(0.0, 101.0, 1.0)
    add("linear_ramp", t, 1.0 + 0.1 * t)
    rng = np.random.default_rng(9)
    t = np.arange(0.0, 121.0, 1.0)
    add("noisy_exponential", t, 1.0 - np.exp(-t / 25.0) + 0.002 * rng.standard_normal(t.size))
    (FIXTURES / "steady_state.json").write_text(json.dumps(cases, indent=2))


if __name__ == "__main__":
    FIXTURES.mkdir(parents=True, exist_ok=True)
    message_fixtures()
    session_fixture()
    steady_fixtures()
    print(f"wrote fixtures into {FIXTURES}")
