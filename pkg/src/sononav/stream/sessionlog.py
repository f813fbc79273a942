"""Session log files: a JSON header followed by the raw wire messages.

File layout: magic "SNAVLOG1" | header JSON length u32 LE | header JSON bytes
| concatenated encoded messages. A recording that did not close cleanly is
left at `<path>.partial` and never renamed to the final name.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from ..errors import FramingError, ProtocolError
from .codec import Message, _decode_at, encode_message

LOG_MAGIC = b"SNAVLOG1"
_LEN = struct.Struct("<I")
PARTIAL_SUFFIX = ".partial"


@dataclass
class SessionLog:
    header: dict
    messages: list[Message]

    def __len__(self) -> int:
        return len(self.messages)


class SessionRecorder:
    """Streaming writer; rename-on-close marks a complete recording."""

    def __init__(self, path: str | os.PathLike, header: dict):
        self.path = Path(path)
        self._tmp = self.path.with_name(self.path.name + PARTIAL_SUFFIX)
        self._fh = open(self._tmp, "wb")
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        self._fh.write(LOG_MAGIC)
        self._fh.write(_LEN.pack(len(header_bytes)))
        self._fh.write(header_bytes)
        self.n_messages = 0

    def write(self, msg: Message) -> None:
        self._fh.write(encode_message(msg))
        self.n_messages += 1

    def write_encoded(self, data: bytes) -> None:
        self._fh.write(data)
        self.n_messages += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._fh.close()
        os.replace(self._tmp, self.path)

    def abort(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "SessionRecorder":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self.abort()


def write_session_log(path: str | os.PathLike, header: dict, messages: Iterable[Message]) -> None:
    with SessionRecorder(path, header) as rec:
        for msg in messages:
            rec.write(msg)


def _read_header(fh) -> dict:
    magic = fh.read(len(LOG_MAGIC))
    if magic != LOG_MAGIC:
        raise ProtocolError("not a session log (bad file magic)")
    raw_len = fh.read(_LEN.size)
    if len(raw_len) != _LEN.size:
        raise FramingError("truncated log header length")
    (header_len,) = _LEN.unpack(raw_len)
    header_bytes = fh.read(header_len)
    if len(header_bytes) != header_len:
        raise FramingError("truncated log header")
    try:
        return json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FramingError(f"log header is not valid JSON: {exc}") from exc


def iter_session_log(path: str | os.PathLike) -> tuple[dict, Iterator[Message]]:
    """Header plus a lazy message iterator (the file is read fully up front)."""
    with open(path, "rb") as fh:
        header = _read_header(fh)
        body = fh.read()

    def gen() -> Iterator[Message]:
        offset = 0
        while offset < len(body):
            msg, offset = _decode_at(body, offset)
            yield msg

    return header, gen()


def read_session_log(path: str | os.PathLike) -> SessionLog:
    header, messages = iter_session_log(path)
    return SessionLog(header=header, messages=list(messages))
