"""Session transport and persistence: binary codec, log files, broadcast server."""

from .codec import (
    ControlMessage,
    FrameMessage,
    Message,
    MessageKind,
    StreamDecoder,
    TrackerMessage,
    decode_message,
    encode_message,
)
from .sessionlog import SessionLog, SessionRecorder, iter_session_log, read_session_log

__all__ = [
    "ControlMessage",
    "FrameMessage",
    "Message",
    "MessageKind",
    "StreamDecoder",
    "TrackerMessage",
    "decode_message",
    "encode_message",
    "SessionLog",
    "SessionRecorder",
    "iter_session_log",
    "read_session_log",
]
