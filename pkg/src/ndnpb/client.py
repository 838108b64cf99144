"""Application-side library: connects to the local forwarder over a local-app face."""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .codec import (
    DEFAULT_LIFETIME_MS,
    Content,
    DecodeError,
    Interest,
    Piggyback,
    bundle,
    decode_packet,
    encode_packet,
    make_interest,
    new_nonce,
    packet_kind,
)
from .name import Name
from .transport import FaceState, StreamFace, open_stream, parse_hostport

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_SLACK_MS = 100.0


class NotConnected(ConnectionError):
    pass


class DuplicatePending(ValueError):
    pass


class InterestTimeout(TimeoutError):
    pass


@dataclass
class PendingInterest:
    name: Name
    interest: Interest
    issued_at: float
    deadline: float
    on_data: Callable
    on_timeout: Optional[Callable]
    retries: int = 0
    timer: Optional[asyncio.TimerHandle] = field(default=None, repr=False)


def parse_address(text: str):
    """``tcp:host:port`` or ``unix:/path`` (a bare ``host:port`` means tcp)."""
    kind, sep, rest = text.partition(":")
    if sep and kind in ("tcp", "unix"):
        return kind, (rest if kind == "unix" else parse_hostport(rest))
    return "tcp", parse_hostport(text)


class Client:
    """Consumer/producer endpoint with its own pending interest table.

    Callbacks run on the event loop in packet arrival order. An interest's
    completion callback fires once: ``on_data(interest, content)`` when
    matching content arrives, or ``on_timeout(interest)`` once
    ``lifetime + timeout_slack_ms`` has passed. The slack keeps a re-expressed
    interest from meeting the still-live PIT entry of its predecessor.
    """

    def __init__(self, timeout_slack_ms: float = DEFAULT_TIMEOUT_SLACK_MS):
        self.timeout_slack_ms = timeout_slack_ms
        self.pit: dict[Name, PendingInterest] = {}
        self.trace: Optional[list] = None
        self._face: Optional[StreamFace] = None
        self._handlers: dict[tuple, Callable] = {}
        self._loop: Optional[asyncio.AbstractEventLoop] = None

    # -- connection --------------------------------------------------------

    async def connect(self, address) -> "Client":
        kind, addr = parse_address(address) if isinstance(address, str) else address
        self._loop = asyncio.get_running_loop()
        self._face = await open_stream(kind, addr, lambda: StreamFace(remote=addr, on_frame=self._on_frame,
                                                                      on_down=self._on_down))
        return self

    @property
    def connected(self) -> bool:
        return self._face is not None and self._face.state is FaceState.UP

    @property
    def face(self) -> Optional[StreamFace]:
        return self._face

    def close(self) -> None:
        if self._face is not None:
            self._face.close()

    def _on_down(self, face) -> None:
        for entry in list(self.pit.values()):
            if entry.timer is not None:
                entry.timer.cancel()
                entry.timer = None

    def _send(self, packet) -> None:
        if not self.connected:
            raise NotConnected("no face to the local forwarder")
        if self.trace is not None:
            self.trace.append(("tx", packet_kind(packet), _names(packet)))
        self._face.send(encode_packet(packet))

    # -- producer side -------------------------------------------------------

    async def register_prefix(self, prefix, on_interest: Callable, timeout: float = 4.0) -> None:
        """Ask the local forwarder to route ``prefix`` here; dispatch matching interests to ``on_interest``."""
        if not self.connected:
            raise NotConnected("no face to the local forwarder")
        prefix = Name(prefix)
        self._handlers[prefix.components] = on_interest
        cmd = Name((b"localhost", b"register") + prefix.components)
        try:
            await self.fetch(cmd, lifetime_ms=int(timeout * 1000))
        except BaseException:
            self._handlers.pop(prefix.components, None)
            raise

    def unregister_prefix(self, prefix) -> None:
        prefix = Name(prefix)
        self._handlers.pop(prefix.components, None)
        if self.connected:
            self._send(make_interest(Name((b"localhost", b"unregister") + prefix.components)))

    def _dispatch(self, interest: Interest) -> None:
        comps = interest.name.components
        for n in range(len(comps), -1, -1):
            handler = self._handlers.get(comps[:n])
            if handler is not None:
                handler(interest)
                return
        log.debug("no handler for interest %s", interest.name)

    def publish(self, content: Content) -> None:
        self._send(content)

    # -- consumer side ---------------------------------------------------------

    def _register_pending(self, interest: Interest, on_data, on_timeout) -> PendingInterest:
        if interest.name in self.pit:
            raise DuplicatePending(str(interest.name))
        now = time.monotonic()
        timeout_s = (interest.lifetime_ms + self.timeout_slack_ms) / 1000.0
        entry = PendingInterest(interest.name, interest, now, now + timeout_s, on_data, on_timeout)
        entry.timer = self._loop.call_later(timeout_s, self._expire, entry)
        self.pit[interest.name] = entry
        return entry

    def express_interest(self, name, on_data: Callable, on_timeout: Optional[Callable] = None,
                         lifetime_ms: int = DEFAULT_LIFETIME_MS) -> Interest:
        if not self.connected:
            raise NotConnected("no face to the local forwarder")
        interest = name if isinstance(name, Interest) else Interest(Name(name), new_nonce(), lifetime_ms)
        entry = self._register_pending(interest, on_data, on_timeout)
        try:
            self._send(interest)
        except BaseException:
            self._drop_pending(entry)
            raise
        return interest

    def reply_piggyback(self, content: Content, interest: Interest, on_data: Callable,
                        on_timeout: Optional[Callable] = None) -> None:
        """Send ``content`` with ``interest`` bundled; the interest is tracked like an expressed one."""
        if not self.connected:
            raise NotConnected("no face to the local forwarder")
        entry = self._register_pending(interest, on_data, on_timeout)
        try:
            self._send(bundle(content, interest))
        except BaseException:
            self._drop_pending(entry)
            raise

    def cancel(self, name) -> bool:
        entry = self.pit.get(Name(name))
        if entry is None:
            return False
        self._drop_pending(entry)
        if entry.on_timeout is not None:
            entry.on_timeout(entry.interest)
        return True

    def cancel_silently(self, name) -> bool:
        """Forget a pending interest without firing its timeout callback."""
        entry = self.pit.get(Name(name))
        if entry is None:
            return False
        self._drop_pending(entry)
        return True

    async def fetch(self, name, lifetime_ms: int = DEFAULT_LIFETIME_MS) -> Content:
        """Express an interest and wait for its content; raises :class:`InterestTimeout`."""
        fut = self._loop.create_future()

        def on_data(interest, content):
            if not fut.done():
                fut.set_result(content)

        def on_timeout(interest):
            if not fut.done():
                fut.set_exception(InterestTimeout(str(interest.name)))

        self.express_interest(name, on_data, on_timeout, lifetime_ms)
        return await fut

    def _drop_pending(self, entry: PendingInterest) -> None:
        if self.pit.get(entry.name) is entry:
            del self.pit[entry.name]
        if entry.timer is not None:
            entry.timer.cancel()
            entry.timer = None

    def _expire(self, entry: PendingInterest) -> None:
        entry.timer = None
        if self.pit.get(entry.name) is not entry:
            return
        del self.pit[entry.name]
        if entry.on_timeout is not None:
            entry.on_timeout(entry.interest)

    # -- receive path ------------------------------------------------------------

    def _on_frame(self, face, frame: bytes) -> None:
        try:
            packet, _ = decode_packet(frame)
        except DecodeError as exc:
            log.debug("dropping undecodable packet: %s", exc)
            return
        if self.trace is not None:
            self.trace.append(("rx", packet_kind(packet), _names(packet)))
        if isinstance(packet, Piggyback):
            self._on_content(packet.content)
            self._dispatch(packet.interest)
        elif isinstance(packet, Content):
            self._on_content(packet)
        else:
            self._dispatch(packet)

    def _on_content(self, content: Content) -> None:
        entry = self.pit.pop(content.name, None)
        if entry is None:
            return
        if entry.timer is not None:
            entry.timer.cancel()
            entry.timer = None
        entry.on_data(entry.interest, content)


def _names(packet):
    if isinstance(packet, Piggyback):
        return (packet.content.name, packet.interest.name)
    return (packet.name,)
