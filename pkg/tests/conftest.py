import math

import numpy as np
import pytest

from sononav.geometry import RigidTransform
from sononav.stream.codec import ControlMessage, FrameMessage, TrackerMessage

CONTROL_EVENTS = (
    "capture_reference",
    "flash",
    "infusion_start",
    "infusion_stop",
    "feedback_mode",
)


def random_pose(rng: np.random.Generator) -> RigidTransform:
    return RigidTransform.random(rng, max_angle_rad=math.pi, max_translation=200.0)


def random_message(rng: np.random.Generator):
    """One random but valid wire message of any kind."""
    kind = rng.integers(0, 3)
    ts = int(rng.integers(0, 10_000_000_000))
    if kind == 0:
        dims = tuple(int(d) for d in rng.integers(1, 9, size=3))
        return FrameMessage(
            timestamp_us=ts,
            pose=None if rng.random() < 0.1 else random_pose(rng),
            dims=dims,
            voxel_size=np.float32(rng.uniform(0.25, 4.0, size=3)),
            voxels=rng.integers(0, 256, size=dims, dtype=np.uint8),
        )
    if kind == 1:
        dropout = rng.random() < 0.2
        return TrackerMessage(
            timestamp_us=ts,
            pose=None if dropout else random_pose(rng),
            quality=float(np.float32(rng.uniform(0, 2.0))),
            dropout=dropout,
        )
    event = CONTROL_EVENTS[rng.integers(0, len(CONTROL_EVENTS))]
    params = ()
    if event == "feedback_mode":
        params = (("mode", ["bmode", "tracked", "blind"][rng.integers(0, 3)]),)
    return ControlMessage(timestamp_us=ts, event=event, params=params)


@pytest.fixture
def message_rng():
    return np.random.default_rng(20240811)
