"""Overlay faces: stream and datagram tunnels over the host network stack.

Stream tunnels carry back-to-back encoded packets; the codec's own
``type | body_len`` header delimits them. Datagram tunnels carry exactly one
packet per datagram. Either way a face only ever hands whole packets up.
"""

from __future__ import annotations

import asyncio
import collections
import enum
import logging
import time
from typing import Callable, Optional

from .codec import DecodeError, HEADER_LEN, peek_frame_length

log = logging.getLogger(__name__)

MAX_REASSEMBLY = 16 * 1024 * 1024
MAX_DATAGRAM = 65507


class FaceError(OSError):
    """A face could not be opened."""


class FaceDown(ConnectionError):
    pass


class SendError(ValueError):
    pass


class FramingError(ValueError):
    pass


class FaceKind(str, enum.Enum):
    STREAM = "stream-tunnel"
    DATAGRAM = "datagram-tunnel"
    LOCAL_APP = "local-app"


class FaceState(str, enum.Enum):
    CONNECTING = "connecting"
    UP = "up"
    DOWN = "down"


class FrameAssembler:
    """Reassembles framed packets from an arbitrary chunking of a byte stream."""

    def __init__(self, max_buffer: int = MAX_REASSEMBLY):
        self.max_buffer = max_buffer
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        buf = self._buf
        buf += data
        frames = []
        pos = 0
        n = len(buf)
        while n - pos >= HEADER_LEN:
            try:
                total = peek_frame_length(buf, pos)
            except DecodeError as exc:
                raise FramingError(str(exc)) from None
            if total > self.max_buffer:
                raise FramingError(f"frame of {total} bytes exceeds reassembly cap")
            if n - pos < total:
                break
            frames.append(bytes(buf[pos:pos + total]))
            pos += total
        if pos:
            del buf[:pos]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


class Impairment:
    """Outbound fault injection: drop packets by predicate, add fixed delay.

    ``drop`` receives the encoded packet and returns True to discard it.
    """

    def __init__(self, drop: Optional[Callable[[bytes], bool]] = None, delay_ms: float = 0.0):
        self.drop = drop
        self.delay_ms = delay_ms
        self.dropped = 0


class Face:
    """Base face. Subclasses implement ``_write`` and ``close``."""

    kind = FaceKind.STREAM

    def __init__(self, remote=None, on_frame=None, on_down=None):
        self.id: Optional[int] = None
        self.remote = remote
        self.state = FaceState.CONNECTING
        self.on_frame = on_frame
        self.on_down = on_down
        self.taps: list = []
        self.impairment: Optional[Impairment] = None
        self._delayed: collections.deque = collections.deque()
        self._delay_timer = None

    def send(self, data: bytes) -> None:
        if self.state is not FaceState.UP:
            raise FaceDown(f"face {self.id} is {self.state.value}")
        imp = self.impairment
        if imp is not None:
            if imp.drop is not None and imp.drop(data):
                imp.dropped += 1
                return
            if imp.delay_ms > 0:
                self._delay(data, imp.delay_ms)
                return
        self._transmit(data)

    def _transmit(self, data: bytes) -> None:
        for tap in self.taps:
            tap("tx", data)
        self._write(data)

    def _delay(self, data: bytes, delay_ms: float) -> None:
        # FIFO queue with one timer keeps per-face order under delay
        loop = asyncio.get_running_loop()
        self._delayed.append((loop.time() + delay_ms / 1000.0, data))
        if self._delay_timer is None:
            self._delay_timer = loop.call_at(self._delayed[0][0], self._flush_delayed)

    def _flush_delayed(self) -> None:
        loop = asyncio.get_running_loop()
        self._delay_timer = None
        now = loop.time()
        while self._delayed and self._delayed[0][0] <= now:
            _, data = self._delayed.popleft()
            if self.state is FaceState.UP:
                self._transmit(data)
        if self._delayed:
            self._delay_timer = loop.call_at(self._delayed[0][0], self._flush_delayed)

    def _deliver(self, frame: bytes) -> None:
        for tap in self.taps:
            tap("rx", frame)
        if self.on_frame is not None:
            self.on_frame(self, frame)

    def _mark_down(self) -> None:
        if self.state is FaceState.DOWN:
            return
        self.state = FaceState.DOWN
        if self._delay_timer is not None:
            self._delay_timer.cancel()
            self._delay_timer = None
        if self.on_down is not None:
            self.on_down(self)

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} id={self.id} remote={self.remote} {self.state.value}>"


class StreamFace(Face, asyncio.Protocol):
    """Face over a TCP or Unix-domain stream connection."""

    def __init__(self, remote=None, on_frame=None, on_down=None, on_up=None, kind=FaceKind.STREAM,
                 max_buffer: int = MAX_REASSEMBLY):
        super().__init__(remote, on_frame, on_down)
        self.kind = kind
        self.on_up = on_up
        self.transport: Optional[asyncio.Transport] = None
        self._assembler = FrameAssembler(max_buffer)

    def connection_made(self, transport):
        self.transport = transport
        if self.remote is None:
            self.remote = transport.get_extra_info("peername")
        self.state = FaceState.UP
        if self.on_up is not None:
            self.on_up(self)

    def data_received(self, data):
        try:
            frames = self._assembler.feed(data)
        except FramingError as exc:
            log.warning("face %s: framing error (%s), closing", self.id, exc)
            self.close()
            return
        for frame in frames:
            self._deliver(frame)
            if self.state is not FaceState.UP:
                return

    def connection_lost(self, exc):
        self._mark_down()

    def _write(self, data: bytes) -> None:
        self.transport.write(data)

    def close(self) -> None:
        if self.transport is not None:
            self.transport.close()
        self._mark_down()


class DatagramFace(Face):
    """One remote peer reached through a shared UDP socket."""

    kind = FaceKind.DATAGRAM

    def __init__(self, endpoint: "DatagramEndpoint", remote, on_frame=None, on_down=None):
        super().__init__(remote, on_frame, on_down)
        self.endpoint = endpoint
        self.state = FaceState.UP

    def send(self, data: bytes) -> None:
        if len(data) > MAX_DATAGRAM:
            raise SendError(f"packet of {len(data)} bytes exceeds datagram limit {MAX_DATAGRAM}")
        super().send(data)

    def _write(self, data: bytes) -> None:
        self.endpoint.transport.sendto(data, self.remote)

    def close(self) -> None:
        self.endpoint.faces.pop(self.remote, None)
        self._mark_down()


class DatagramEndpoint(asyncio.DatagramProtocol):
    """A UDP socket demultiplexing datagrams into per-peer faces.

    ``on_new_face`` is called for datagrams from unknown peers and may
    return a face (after wiring its callbacks) or None to ignore the peer.
    """

    def __init__(self, on_new_face: Optional[Callable] = None):
        self.on_new_face = on_new_face
        self.transport = None
        self.faces: dict = {}

    def connection_made(self, transport):
        self.transport = transport

    def face_for(self, remote, **kwargs) -> DatagramFace:
        face = self.faces.get(remote)
        if face is None:
            face = DatagramFace(self, remote, **kwargs)
            self.faces[remote] = face
        return face

    def datagram_received(self, data, addr):
        face = self.faces.get(addr)
        if face is None:
            if self.on_new_face is None:
                return
            face = self.on_new_face(self, addr)
            if face is None:
                return
        try:
            total = peek_frame_length(data)
        except DecodeError:
            total = None
        if total != len(data):
            log.debug("dropping datagram from %s: not exactly one packet", addr)
            return
        face._deliver(data)

    def error_received(self, exc):
        log.debug("datagram error: %s", exc)

    def connection_lost(self, exc):
        for face in list(self.faces.values()):
            face._mark_down()
        self.faces.clear()


def parse_hostport(text: str) -> tuple:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


async def open_stream(kind: str, address, protocol_factory, retry_for: float = 0.0):
    """Connect a stream face; ``kind`` is ``tcp`` or ``unix``.

    Refused connections are retried for ``retry_for`` seconds before
    :class:`FaceError` is raised.
    """
    loop = asyncio.get_running_loop()
    deadline = time.monotonic() + retry_for
    delay = 0.02
    while True:
        try:
            if kind == "unix":
                _, proto = await loop.create_unix_connection(protocol_factory, address)
            else:
                host, port = address
                _, proto = await loop.create_connection(protocol_factory, host, port)
            return proto
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise FaceError(f"cannot connect to {kind} {address}: {exc.strerror or exc}") from exc
            await asyncio.sleep(delay)
            delay = min(delay * 2, 0.5)
