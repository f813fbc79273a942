import json
import os

import numpy as np
import pytest
from conftest import random_message, random_pose

from sononav.errors import ProtocolError
from sononav.stream.codec import FrameMessage, encode_message
from sononav.stream.sessionlog import (
    LOG_MAGIC,
    PARTIAL_SUFFIX,
    SessionRecorder,
    iter_session_log,
    read_session_log,
    write_session_log,
)


def test_record_then_replay_identity(tmp_path, message_rng):
    msgs = [random_message(message_rng) for _ in range(50)]
    header = {"seed": 7, "protocol_version": 1}
    path = tmp_path / "session.snavlog"
    write_session_log(path, header, msgs)
    log = read_session_log(path)
    assert log.header == header
    assert log.messages == msgs


def test_empty_session_header_only(tmp_path):
    path = tmp_path / "empty.snavlog"
    header = {"seed": 0}
    write_session_log(path, header, [])
    raw = path.read_bytes()
    header_bytes = json.dumps(header, sort_keys=True).encode()
    assert raw == LOG_MAGIC + len(header_bytes).to_bytes(4, "little") + header_bytes
    log = read_session_log(path)
    assert log.messages == []


def test_file_size_arithmetic(tmp_path, message_rng):
    # 600 frames of 64^3 voxels: size = file header + 600 * (overhead + 64^3)
    dims = (64, 64, 64)
    header = {"seed": 1}
    path = tmp_path / "tenmin.snavlog"
    voxels = np.zeros(dims, dtype=np.uint8)
    pose = random_pose(message_rng)
    with SessionRecorder(path, header) as rec:
        for i in range(600):
            rec.write(
                FrameMessage(
                    timestamp_us=i * 1_000_000, pose=pose, dims=dims, voxel_size=1.0, voxels=voxels
                )
            )
    header_bytes = json.dumps(header, sort_keys=True).encode()
    frame_overhead = (4 + 1 + 1 + 8 + 4) + (56 + 6 + 12)
    expected = len(LOG_MAGIC) + 4 + len(header_bytes) + 600 * (frame_overhead + 64**3)
    assert os.path.getsize(path) == expected


def test_abort_leaves_partial_marker(tmp_path, message_rng):
    path = tmp_path / "broken.snavlog"
    rec = SessionRecorder(path, {"seed": 2})
    rec.write(random_message(message_rng))
    rec.abort()
    assert not path.exists()
    assert path.with_name(path.name + PARTIAL_SUFFIX).exists()


def test_context_manager_abort_on_exception(tmp_path, message_rng):
    path = tmp_path / "crash.snavlog"
    with pytest.raises(RuntimeError):
        with SessionRecorder(path, {}) as rec:
            rec.write(random_message(message_rng))
            raise RuntimeError("boom")
    assert not path.exists()
    assert path.with_name(path.name + PARTIAL_SUFFIX).exists()


def test_bad_file_magic(tmp_path):
    path = tmp_path / "not_a_log.bin"
    path.write_bytes(b"GARBAGE!" + b"\x00" * 32)
    with pytest.raises(ProtocolError):
        read_session_log(path)


def test_iter_session_log_streams(tmp_path, message_rng):
    msgs = [random_message(message_rng) for _ in range(5)]
    path = tmp_path / "stream.snavlog"
    write_session_log(path, {"n": 5}, msgs)
    header, it = iter_session_log(path)
    assert header == {"n": 5}
    assert list(it) == msgs


def test_write_encoded_matches_write(tmp_path, message_rng):
    msgs = [random_message(message_rng) for _ in range(8)]
    p1 = tmp_path / "a.snavlog"
    p2 = tmp_path / "b.snavlog"
    write_session_log(p1, {"x": 1}, msgs)
    with SessionRecorder(p2, {"x": 1}) as rec:
        for m in msgs:
            rec.write_encoded(encode_message(m))
    assert p1.read_bytes() == p2.read_bytes()
