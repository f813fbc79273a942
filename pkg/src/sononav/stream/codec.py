"""Length-prefixed binary wire format for session streams.

Message layout (all little-endian):
  magic "SNAV" | version u8 | kind u8 | timestamp u64 (us) | payload len u32 | payload

Frame payload:   pose 7 x f64 (qw qx qy qz tx ty tz mm), dims 3 x u16,
                 voxel size 3 x f32 mm, raw 8-bit voxels (C order).
Tracker payload: pose 7 x f64, quality f32, dropout u8.
Control payload: UTF-8 "key=value" lines, first line "event=<name>".

A missing pose (tracker dropout) is encoded as seven zeros, which is not a
valid unit quaternion and therefore unambiguous.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Union

import numpy as np

from ..errors import (
    FramingError,
    InvalidInputError,
    MessageSizeError,
    ProtocolError,
    UnsupportedVersionError,
)
from ..geometry import RigidTransform

MAGIC = b"SNAV"
PROTOCOL_VERSION = 1
HEADER = struct.Struct("<4sBBQI")
MAX_PAYLOAD = 256 * 1024 * 1024

_POSE = struct.Struct("<7d")
_FRAME_META = struct.Struct("<3H3f")
_TRACKER_TAIL = struct.Struct("<fB")


class MessageKind(IntEnum):
    FRAME = 1
    TRACKER = 2
    CONTROL = 3


class FrameMessage:
    """Volume frame on the wire."""

    kind = MessageKind.FRAME

    def __init__(
        self,
        timestamp_us: int,
        pose: RigidTransform | None,
        dims: tuple[int, int, int],
        voxel_size,
        voxels: np.ndarray,
    ):
        self.timestamp_us = int(timestamp_us)
        self.pose = pose
        self.dims = tuple(int(d) for d in dims)
        # voxel size travels as f32; coerce now so encode/decode is the identity
        vs = np.asarray(voxel_size, dtype=np.float32)
        if vs.ndim == 0:
            vs = np.repeat(vs, 3)
        self.voxel_size = vs.astype(float)
        vox = np.asarray(voxels, dtype=np.uint8)
        if vox.shape != self.dims:
            raise InvalidInputError("voxel shape does not match dims")
        self.voxels = vox

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameMessage):
            return NotImplemented
        return (
            self.timestamp_us == other.timestamp_us
            and _pose_eq(self.pose, other.pose)
            and self.dims == other.dims
            and np.array_equal(self.voxel_size, other.voxel_size)
            and np.array_equal(self.voxels, other.voxels)
        )

    def __repr__(self) -> str:
        return f"FrameMessage(t={self.timestamp_us}us, dims={self.dims})"


class TrackerMessage:
    """Tracker sample on the wire; dropout true means the pose was lost."""

    kind = MessageKind.TRACKER

    def __init__(
        self,
        timestamp_us: int,
        pose: RigidTransform | None,
        quality: float = 0.0,
        dropout: bool = False,
    ):
        self.timestamp_us = int(timestamp_us)
        self.pose = pose
        self.quality = float(np.float32(quality))
        self.dropout = bool(dropout)
        if not dropout and pose is None:
            raise InvalidInputError("non-dropout tracker message needs a pose")

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrackerMessage):
            return NotImplemented
        return (
            self.timestamp_us == other.timestamp_us
            and _pose_eq(self.pose, other.pose)
            and self.quality == other.quality
            and self.dropout == other.dropout
        )

    def __repr__(self) -> str:
        return f"TrackerMessage(t={self.timestamp_us}us, dropout={self.dropout})"


@dataclass(frozen=True)
class ControlMessage:
    """Session control event: capture_reference, flash, infusion_start,
    infusion_stop or feedback_mode, with optional extra key=value params."""

    timestamp_us: int
    event: str
    params: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    kind = MessageKind.CONTROL

    def param(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.params:
            if k == key:
                return v
        return default


Message = Union[FrameMessage, TrackerMessage, ControlMessage]


def _pose_eq(a: RigidTransform | None, b: RigidTransform | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)


def _pack_pose(pose: RigidTransform | None) -> bytes:
    if pose is None:
        return _POSE.pack(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    q = pose.rotation
    t = pose.translation
    return _POSE.pack(q[0], q[1], q[2], q[3], t[0], t[1], t[2])


def _unpack_pose(buf: bytes, offset: int) -> RigidTransform | None:
    vals = _POSE.unpack_from(buf, offset)
    if all(v == 0.0 for v in vals):
        return None
    try:
        return RigidTransform(np.array(vals[:4]), np.array(vals[4:]))
    except Exception as exc:
        raise FramingError(f"malformed pose in payload: {exc}") from exc


def encode_message(msg: Message) -> bytes:
    """Serialize one message to its wire bytes."""
    if isinstance(msg, FrameMessage):
        payload = (
            _pack_pose(msg.pose)
            + _FRAME_META.pack(*msg.dims, *msg.voxel_size)
            + msg.voxels.tobytes(order="C")
        )
    elif isinstance(msg, TrackerMessage):
        payload = _pack_pose(msg.pose) + _TRACKER_TAIL.pack(msg.quality, 1 if msg.dropout else 0)
    elif isinstance(msg, ControlMessage):
        lines = [f"event={msg.event}"]
        lines.extend(f"{k}={v}" for k, v in msg.params)
        payload = "\n".join(lines).encode("utf-8")
    else:
        raise InvalidInputError(f"not a message: {type(msg).__name__}")
    if len(payload) > MAX_PAYLOAD:
        raise MessageSizeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    header = HEADER.pack(MAGIC, PROTOCOL_VERSION, int(msg.kind), msg.timestamp_us, len(payload))
    return header + payload


def decode_message(data: bytes | bytearray | memoryview) -> Message:
    """Decode one message from the start of `data` (trailing bytes ignored).

    Raises ProtocolError on bad magic, UnsupportedVersionError on a version
    mismatch, and FramingError on any truncation or payload inconsistency;
    arbitrary input never raises anything else.
    """
    msg, _ = _decode_at(bytes(data), 0)
    return msg


def _decode_at(data: bytes, offset: int) -> tuple[Message, int]:
    remaining = len(data) - offset
    if remaining >= 4 and data[offset : offset + 4] != MAGIC:
        raise ProtocolError("bad magic")
    if remaining < HEADER.size:
        if 0 < remaining < 4 and not MAGIC.startswith(data[offset:]):
            raise ProtocolError("bad magic")
        raise FramingError("truncated header")
    magic, version, kind, timestamp_us, length = HEADER.unpack_from(data, offset)
    if magic != MAGIC:
        raise ProtocolError("bad magic")
    if version != PROTOCOL_VERSION:
        raise UnsupportedVersionError(f"protocol version {version} unsupported")
    if length > MAX_PAYLOAD:
        raise FramingError(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    start = offset + HEADER.size
    if len(data) - start < length:
        raise FramingError("truncated payload")
    payload = data[start : start + length]
    end = start + length

    if kind == MessageKind.FRAME:
        return _decode_frame(timestamp_us, payload), end
    if kind == MessageKind.TRACKER:
        return _decode_tracker(timestamp_us, payload), end
    if kind == MessageKind.CONTROL:
        return _decode_control(timestamp_us, payload), end
    raise FramingError(f"unknown message kind {kind}")


def _decode_frame(timestamp_us: int, payload: bytes) -> FrameMessage:
    meta_len = _POSE.size + _FRAME_META.size
    if len(payload) < meta_len:
        raise FramingError("frame payload too short")
    pose = _unpack_pose(payload, 0)
    nx, ny, nz, vx, vy, vz = _FRAME_META.unpack_from(payload, _POSE.size)
    n = nx * ny * nz
    if len(payload) != meta_len + n:
        raise FramingError("frame payload length does not match dims")
    if not (vx > 0 and vy > 0 and vz > 0):
        raise FramingError("non-positive voxel size")
    voxels = np.frombuffer(payload, dtype=np.uint8, count=n, offset=meta_len).reshape(nx, ny, nz)
    return FrameMessage(
        timestamp_us=timestamp_us,
        pose=pose,
        dims=(nx, ny, nz),
        voxel_size=np.array([vx, vy, vz], dtype=np.float32),
        voxels=voxels.copy(),
    )


def _decode_tracker(timestamp_us: int, payload: bytes) -> TrackerMessage:
    if len(payload) != _POSE.size + _TRACKER_TAIL.size:
        raise FramingError("tracker payload has wrong length")
    pose = _unpack_pose(payload, 0)
    quality, dropout = _TRACKER_TAIL.unpack_from(payload, _POSE.size)
    if dropout not in (0, 1):
        raise FramingError("dropout flag must be 0 or 1")
    if not np.isfinite(quality) or quality < 0:
        raise FramingError("quality must be finite and >= 0")
    if dropout == 0 and pose is None:
        raise FramingError("non-dropout tracker message without pose")
    return TrackerMessage(
        timestamp_us=timestamp_us, pose=pose, quality=float(quality), dropout=bool(dropout)
    )


def _decode_control(timestamp_us: int, payload: bytes) -> ControlMessage:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FramingError("control payload is not UTF-8") from exc
    if not text:
        raise FramingError("empty control payload")
    lines = text.split("\n")
    pairs = []
    for line in lines:
        if "=" not in line:
            raise FramingError(f"control line without '=': {line!r}")
        key, _, value = line.partition("=")
        pairs.append((key, value))
    if pairs[0][0] != "event":
        raise FramingError("control payload must start with event=")
    return ControlMessage(timestamp_us=timestamp_us, event=pairs[0][1], params=tuple(pairs[1:]))


def iter_messages(data: bytes) -> Iterator[Message]:
    """Decode back-to-back messages from a buffer; errors propagate."""
    offset = 0
    while offset < len(data):
        msg, offset = _decode_at(data, offset)
        yield msg


class StreamDecoder:
    """Incremental decoder with magic-scan resynchronization.

    feed() returns every complete message in arrival order; on a framing
    error the buffer is scanned forward to the next magic so a corrupted
    message costs only itself.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self.errors = 0

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out: list[Message] = []
        while True:
            if not self._buf:
                return out
            start = self._buf.find(MAGIC)
            if start < 0:
                # keep a potential magic prefix at the tail
                del self._buf[: max(0, len(self._buf) - (len(MAGIC) - 1))]
                return out
            if start > 0:
                self.errors += 1
                del self._buf[:start]
            if len(self._buf) < HEADER.size:
                return out
            _, version, _, _, length = HEADER.unpack_from(self._buf, 0)
            if version != PROTOCOL_VERSION or length > MAX_PAYLOAD:
                self.errors += 1
                del self._buf[:1]
                continue
            total = HEADER.size + length
            if len(self._buf) < total:
                return out
            try:
                msg, _ = _decode_at(bytes(self._buf[:total]), 0)
            except Exception:
                self.errors += 1
                del self._buf[:1]
                continue
            out.append(msg)
            del self._buf[:total]
