"""Broadcast session service: one producer, N byte-stream subscribers.

Messages are paced by their original timestamps against the wall clock
unless max_speed is set. Subscribers receive the raw wire bytes; anything a
subscriber sends back is decoded and forwarded to the source as a control
event. A slow subscriber is dropped once its queue backlog exceeds the bound
rather than stalling the producer.
"""
from __future__ import annotations

import asyncio
import logging
from typing import AsyncIterator, Callable, Iterable, Protocol

from .codec import ControlMessage, Message, StreamDecoder, encode_message

log = logging.getLogger(__name__)

SUBSCRIBER_BACKLOG = 64


class SessionSourceLike(Protocol):
    def messages(self) -> Iterable[Message]: ...

    def handle_control(self, msg: ControlMessage) -> None: ...


class LogSource:
    """Replay source for a recorded message list; controls are logged only."""

    def __init__(self, messages: Iterable[Message]):
        self._messages = list(messages)
        self.received_controls: list[ControlMessage] = []

    def messages(self) -> Iterable[Message]:
        return iter(self._messages)

    def handle_control(self, msg: ControlMessage) -> None:
        self.received_controls.append(msg)


class SessionHub:
    """Fan-out of encoded messages to per-subscriber queues."""

    def __init__(self, backlog: int = SUBSCRIBER_BACKLOG):
        self._backlog = backlog
        self._queues: dict[int, asyncio.Queue[bytes | None]] = {}
        self._next_id = 0
        self.messages_published = 0

    def subscribe(self) -> tuple[int, asyncio.Queue]:
        q: asyncio.Queue = asyncio.Queue(maxsize=self._backlog)
        sid = self._next_id
        self._next_id += 1
        self._queues[sid] = q
        return sid, q

    def unsubscribe(self, sid: int) -> None:
        self._queues.pop(sid, None)

    def publish(self, data: bytes) -> None:
        self.messages_published += 1
        for sid, q in list(self._queues.items()):
            try:
                q.put_nowait(data)
            except asyncio.QueueFull:
                log.warning("dropping slow subscriber %d (backlog > %d)", sid, self._backlog)
                self.unsubscribe(sid)
                try:
                    q.get_nowait()  # make room for the close marker
                except asyncio.QueueEmpty:
                    pass
                q.put_nowait(None)

    def close(self) -> None:
        for q in self._queues.values():
            try:
                q.put_nowait(None)
            except asyncio.QueueFull:
                pass
        self._queues.clear()

    @property
    def n_subscribers(self) -> int:
        return len(self._queues)


class SessionService:
    """TCP broadcast endpoint around one session source."""

    def __init__(
        self,
        source: SessionSourceLike,
        host: str = "127.0.0.1",
        port: int = 0,
        max_speed: bool = False,
        min_subscribers: int = 0,
        on_message: Callable[[Message, bytes], None] | None = None,
    ):
        self.source = source
        self.host = host
        self.port = port
        self.max_speed = max_speed
        self.min_subscribers = min_subscribers
        self.hub = SessionHub()
        self.on_message = on_message
        self._server: asyncio.AbstractServer | None = None
        self._producer: asyncio.Task | None = None
        self.finished = asyncio.Event()

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._handle_client, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._producer = asyncio.create_task(self._produce())

    async def _produce(self) -> None:
        loop = asyncio.get_running_loop()
        while self.hub.n_subscribers < self.min_subscribers:
            await asyncio.sleep(0.01)
        t_start = loop.time()
        try:
            for msg in self.source.messages():
                if not self.max_speed:
                    target = t_start + msg.timestamp_us / 1e6
                    delay = target - loop.time()
                    if delay > 0:
                        await asyncio.sleep(delay)
                else:
                    # yield so subscriber writers keep up in max-speed replay
                    await asyncio.sleep(0)
                data = encode_message(msg)
                if self.on_message is not None:
                    self.on_message(msg, data)
                self.hub.publish(data)
        finally:
            self.hub.close()
            self.finished.set()

    async def _handle_client(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        sid, queue = self.hub.subscribe()
        peer = writer.get_extra_info("peername")
        log.info("subscriber %d connected from %s", sid, peer)
        control_task = asyncio.create_task(self._read_controls(reader))
        try:
            while True:
                data = await queue.get()
                if data is None:
                    break
                writer.write(data)
                await writer.drain()
        except (ConnectionResetError, BrokenPipeError):
            log.info("subscriber %d disconnected", sid)
        finally:
            self.hub.unsubscribe(sid)
            control_task.cancel()
            try:
                writer.close()
                await writer.wait_closed()
            except Exception:
                pass

    async def _read_controls(self, reader: asyncio.StreamReader) -> None:
        decoder = StreamDecoder()
        try:
            while True:
                chunk = await reader.read(4096)
                if not chunk:
                    return
                for msg in decoder.feed(chunk):
                    if isinstance(msg, ControlMessage):
                        self.source.handle_control(msg)
        except (ConnectionResetError, asyncio.CancelledError):
            return

    async def wait_finished(self) -> None:
        await self.finished.wait()
        if self._producer is not None:
            await self._producer

    async def stop(self) -> None:
        if self._producer is not None and not self._producer.done():
            self._producer.cancel()
            try:
                await self._producer
            except asyncio.CancelledError:
                pass
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        self.hub.close()


async def serve_session(
    source: SessionSourceLike,
    endpoint: str = "127.0.0.1:0",
    max_speed: bool = False,
    min_subscribers: int = 0,
    on_message: Callable[[Message, bytes], None] | None = None,
) -> SessionService:
    """Start a broadcast service for the source on host:port and return it.

    With min_subscribers > 0 the stream holds until that many subscribers
    are connected, so none of them misses the session start.
    """
    host, _, port = endpoint.rpartition(":")
    service = SessionService(
        source,
        host=host or "127.0.0.1",
        port=int(port),
        max_speed=max_speed,
        min_subscribers=min_subscribers,
        on_message=on_message,
    )
    await service.start()
    return service


async def subscribe_messages(
    host: str, port: int, send_controls: Iterable[ControlMessage] = ()
) -> AsyncIterator[Message]:
    """Client helper: connect, optionally send controls, yield messages."""
    reader, writer = await asyncio.open_connection(host, port)
    try:
        for ctrl in send_controls:
            writer.write(encode_message(ctrl))
            await writer.drain()
        decoder = StreamDecoder()
        while True:
            chunk = await reader.read(65536)
            if not chunk:
                break
            for msg in decoder.feed(chunk):
                yield msg
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except Exception:
            pass
