"""Bidirectional sessions between two endpoints.

Naming: the data that endpoint X produces for peer Y lives under
``X/call/<Y...>/<tag>/<seq>``; the initiator opens a session by expressing an
interest for ``Responder/call/<Initiator...>/<tag>`` and the responder accepts
by answering it. ``tag`` is a per-session component (never all digits) that
keeps names unique across sessions, so forwarder caches do not short-circuit
a repeat run.

Transfer runs in lock-step. The initiator opens with ``window`` plain
interests. Whoever receives an interest answers with the requested content
and, while it still has items to request and window room, its next interest.
In piggyback mode those two travel as one piggyback packet. An endpoint that
has nothing left to request answers with plain content, so the closing
``window`` contents are plain.

A timed-out interest drops the session into separate mode and is
re-expressed with a fresh nonce; after ``resume_threshold`` consecutive
clean exchanges the session goes back to piggybacking.
"""

from __future__ import annotations

import asyncio
import enum
import logging
import math
import os
import time
import weakref
from fractions import Fraction
from typing import Optional

from .client import Client, InterestTimeout
from .codec import DEFAULT_LIFETIME_MS, Interest, KeyedHashSigner, make_content, new_nonce
from .name import Name

log = logging.getLogger(__name__)

CALL = b"call"
ACCEPT = b"accept"
DEFAULT_MAX_RETRIES = 3
DEFAULT_RESUME_THRESHOLD = 3
DEFAULT_KEY = b"ndnpb session key"


class Mode(str, enum.Enum):
    PIGGYBACK = "piggyback"
    SEPARATE = "separate"


class Role(str, enum.Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


class SessionFailed(Exception):
    pass


class TransferFailed(Exception):
    def __init__(self, message: str, partial: list):
        super().__init__(message)
        self.partial = partial


def window_size(rtt_ms: float, rate: float) -> int:
    """Interests to keep in flight so content streaming covers one RTT: ceil(RTT * rate)."""
    w = math.ceil(Fraction(str(rtt_ms)) * Fraction(str(rate)) / 1000)
    return max(1, w)


def new_tag() -> bytes:
    return b"s" + os.urandom(4).hex().encode()


class Session:
    def __init__(self, client: Client, local_prefix, remote_prefix, role: Role, tag: bytes, *,
                 window: int = 1, mode: Mode = Mode.PIGGYBACK, rate_hint: Optional[float] = None,
                 lifetime_ms: int = DEFAULT_LIFETIME_MS, max_retries: int = DEFAULT_MAX_RETRIES,
                 resume_threshold: int = DEFAULT_RESUME_THRESHOLD, signer=None, verifier=None):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.client = client
        self.local_prefix = Name(local_prefix)
        self.remote_prefix = Name(remote_prefix)
        self.role = Role(role)
        self.tag = tag
        self.window = window
        self.rate_hint = rate_hint
        self.configured_mode = Mode(mode)
        self.mode = self.configured_mode
        self.lifetime_ms = lifetime_ms
        self.max_retries = max_retries
        self.resume_threshold = resume_threshold
        self.signer = signer if signer is not None else KeyedHashSigner(DEFAULT_KEY)
        self.verifier = verifier
        self.out_base = self.local_prefix + (CALL,) + self.remote_prefix.components + (tag,)
        self.in_base = self.remote_prefix + (CALL,) + self.local_prefix.components + (tag,)

        self.next_seq_out = 0        # lowest own seq not yet served
        self.next_seq_expected = 0   # next peer seq to request
        self.rtt_estimate_ms: Optional[float] = None
        self.rtt_samples_us: list = []
        self.mode_changes: list = []  # (peer seq, new mode)
        self.max_outstanding = 0

        self._items = None
        self._n = 0
        self._early: list = []
        self._served: set = set()
        self._received: dict = {}
        self._outstanding: dict = {}
        self._retries: dict = {}
        self._retransmitted: set = set()
        self._deferred = 0
        self._clean_streak = 0
        self._done: Optional[asyncio.Future] = None
        self._endpoint: Optional["SessionEndpoint"] = None
        self.t_start: Optional[float] = None
        self.t_end: Optional[float] = None

    # -- interest issuance -------------------------------------------------------

    @property
    def outstanding(self) -> int:
        return len(self._outstanding)

    def _new_interest(self) -> Interest:
        seq = self.next_seq_expected
        self.next_seq_expected += 1
        interest = Interest(self.in_base.append(seq), new_nonce(), self.lifetime_ms)
        self._outstanding[seq] = time.monotonic()
        assert len(self._outstanding) <= self.window
        self.max_outstanding = max(self.max_outstanding, len(self._outstanding))
        return interest

    def _next_interest(self) -> Optional[Interest]:
        """Next interest to send with a reply, or None (deferring it if only the window blocks)."""
        if self.next_seq_expected >= self._n:
            return None
        if len(self._outstanding) >= self.window:
            self._deferred += 1
            return None
        return self._new_interest()

    def _express(self, interest: Interest) -> None:
        self.client.express_interest(interest, self._on_data, self._on_timeout)

    def _pump(self) -> None:
        while self._deferred and self.next_seq_expected < self._n and len(self._outstanding) < self.window:
            self._deferred -= 1
            self._express(self._new_interest())

    # -- transfer ------------------------------------------------------------------

    async def run_transfer(self, items, count: Optional[int] = None) -> list:
        """Send ``items`` to the peer while fetching as many of the peer's; return the peer's in order."""
        n = len(items) if count is None else count
        if n > len(items):
            raise ValueError("fewer items than count")
        self._items = items
        self._n = n
        self._done = asyncio.get_running_loop().create_future()
        self.t_start = time.monotonic()
        if self.role is Role.INITIATOR:
            for _ in range(min(self.window, n)):
                self._express(self._new_interest())
        early, self._early = self._early, []
        for seq, interest in early:
            self._serve(seq, interest)
        self._check_done()
        return await self._done

    def _serve(self, seq: int, interest: Interest) -> None:
        if self._items is None:
            self._early.append((seq, interest))
            return
        if seq >= self._n:
            return
        content = make_content(self.out_base.append(seq), self._items[seq], signer=self.signer)
        self._served.add(seq)
        while self.next_seq_out in self._served:
            self.next_seq_out += 1
        nxt = self._next_interest()
        if nxt is not None and self.mode is Mode.PIGGYBACK:
            self.client.reply_piggyback(content, nxt, self._on_data, self._on_timeout)
        else:
            self.client.publish(content)
            if nxt is not None:
                self._express(nxt)
        self._check_done()

    def _on_data(self, interest: Interest, content) -> None:
        seq = int(content.name.components[-1])
        issued = self._outstanding.pop(seq, None)
        if issued is None:
            return
        if self.verifier is not None and not self.verifier.verify(content):
            log.warning("session %s: bad signature on %s", self.tag, content.name)
        if seq not in self._retransmitted:
            sample_ms = (time.monotonic() - issued) * 1000.0
            self.rtt_samples_us.append(sample_ms * 1000.0)
            if self.rtt_estimate_ms is None:
                self.rtt_estimate_ms = sample_ms
            else:
                self.rtt_estimate_ms += (sample_ms - self.rtt_estimate_ms) / 8
        self._received[seq] = content.payload
        if self.mode is not self.configured_mode:
            self._clean_streak += 1
            if self._clean_streak >= self.resume_threshold:
                self.mode = self.configured_mode
                self.mode_changes.append((seq, self.mode))
        self._pump()
        self._check_done()

    def _on_timeout(self, interest: Interest) -> None:
        self.recover(interest)

    def recover(self, failed: Interest) -> None:
        """Fall back to separate packets and re-express ``failed`` with a fresh nonce."""
        seq = int(failed.name.components[-1])
        if seq not in self._outstanding or self._done is None or self._done.done():
            return
        self._retries[seq] = self._retries.get(seq, 0) + 1
        if self._retries[seq] > self.max_retries:
            self._fail(f"interest {failed.name} unanswered after {self.max_retries} retries")
            return
        if self.mode is not Mode.SEPARATE:
            self.mode_changes.append((seq, Mode.SEPARATE))
        self.mode = Mode.SEPARATE
        self._clean_streak = 0
        self._retransmitted.add(seq)
        self._outstanding[seq] = time.monotonic()
        self._express(Interest(failed.name, new_nonce(), failed.lifetime_ms))

    def _fail(self, message: str) -> None:
        partial = [self._received[i] for i in sorted(self._received)]
        self.t_end = time.monotonic()
        if not self._done.done():
            self._done.set_exception(TransferFailed(message, partial))

    def _check_done(self) -> None:
        done = self._done
        if done is None or done.done():
            return
        if len(self._received) == self._n and len(self._served) == self._n:
            self.t_end = time.monotonic()
            done.set_result([self._received[i] for i in range(self._n)])

    def close(self) -> None:
        """Stop serving the peer and drop transfer state."""
        if self._endpoint is not None:
            self._endpoint.sessions.pop(self._endpoint._key(self), None)
            self._endpoint = None
        for seq in list(self._outstanding):
            self.client.cancel_silently(self.in_base.append(seq))
        self._outstanding.clear()
        self._items = None
        self._received = {}
        if self._done is not None and not self._done.done():
            self._done.cancel()

    @property
    def transfer_time(self) -> Optional[float]:
        if self.t_start is None or self.t_end is None:
            return None
        return self.t_end - self.t_start

    def __repr__(self):
        return (f"<Session {self.role.value} {self.local_prefix}<->{self.remote_prefix} "
                f"tag={self.tag.decode()} w={self.window} mode={self.mode.value}>")


class SessionEndpoint:
    """Owns one registered prefix on a client and routes interests to its sessions."""

    def __init__(self, client: Client, prefix):
        self.client = client
        self.prefix = Name(prefix)
        self.sessions: dict = {}
        self._calls: asyncio.Queue = asyncio.Queue()

    async def start(self) -> "SessionEndpoint":
        await self.client.register_prefix(self.prefix, self._on_interest)
        return self

    def _on_interest(self, interest: Interest) -> None:
        rest = interest.name.components[len(self.prefix):]
        if len(rest) < 2 or rest[0] != CALL:
            return
        rest = rest[1:]
        if rest[-1].isdigit():
            session = self.sessions.get(rest[:-1])
            if session is not None:
                session._serve(int(rest[-1]), interest)
            return
        if rest in self.sessions:
            self.client.publish(make_content(interest.name, ACCEPT))  # repeated call
        else:
            self._calls.put_nowait(interest)

    def _key(self, session: Session) -> tuple:
        return session.remote_prefix.components + (session.tag,)

    async def call(self, remote_prefix, *, lifetime_ms: int = DEFAULT_LIFETIME_MS,
                   retries: int = DEFAULT_MAX_RETRIES, tag: Optional[bytes] = None, **opts) -> Session:
        session = Session(self.client, self.prefix, remote_prefix, Role.INITIATOR, tag or new_tag(),
                          lifetime_ms=lifetime_ms, **opts)
        key = self._key(session)
        self.sessions[key] = session
        session._endpoint = self
        call_name = session.in_base
        for _ in range(retries + 1):
            try:
                await self.client.fetch(call_name, lifetime_ms=lifetime_ms)
                return session
            except InterestTimeout:
                continue
        del self.sessions[key]
        session._endpoint = None
        raise SessionFailed(f"no answer to call {call_name}")

    async def accept(self, expect=None, timeout: Optional[float] = None, **opts) -> Session:
        """Wait for a call (optionally only from ``expect``) and acknowledge it."""
        expect = Name(expect) if expect is not None else None

        async def next_call():
            while True:
                interest = await self._calls.get()
                rest = interest.name.components[len(self.prefix) + 1:]
                remote = Name(rest[:-1])
                if expect is None or remote == expect:
                    return interest, remote, rest[-1]

        try:
            interest, remote, tag = await asyncio.wait_for(next_call(), timeout)
        except asyncio.TimeoutError:
            raise SessionFailed("no incoming call") from None
        session = Session(self.client, self.prefix, remote, Role.RESPONDER, tag, **opts)
        self.sessions[self._key(session)] = session
        session._endpoint = self
        self.client.publish(make_content(interest.name, ACCEPT, signer=session.signer))
        return session


_endpoints: "weakref.WeakKeyDictionary[Client, dict]" = weakref.WeakKeyDictionary()


async def session_endpoint(client: Client, prefix) -> SessionEndpoint:
    """The client's endpoint for ``prefix``, registering it on first use."""
    prefix = Name(prefix)
    table = _endpoints.setdefault(client, {})
    endpoint = table.get(prefix)
    if endpoint is None:
        endpoint = SessionEndpoint(client, prefix)
        table[prefix] = endpoint
        try:
            await endpoint.start()
        except BaseException:
            del table[prefix]
            raise
    return endpoint


async def establish_session(client: Client, local_prefix, remote_prefix=None, window: Optional[int] = None,
                            rate: Optional[float] = None, *, role="initiator", rtt_ms: Optional[float] = None,
                            mode="piggyback", timeout: Optional[float] = None, **opts) -> Session:
    """Set up a session as initiator (call ``remote_prefix``) or responder (wait for a call).

    When ``window`` is omitted it is derived from ``rtt_ms`` and ``rate``,
    falling back to 1.
    """
    if window is None:
        window = window_size(rtt_ms, rate) if rtt_ms is not None and rate is not None else 1
    endpoint = await session_endpoint(client, local_prefix)
    opts.update(window=window, mode=Mode(mode), rate_hint=rate)
    if Role(role) is Role.INITIATOR:
        if remote_prefix is None:
            raise ValueError("initiator needs a remote prefix")
        return await endpoint.call(remote_prefix, **opts)
    return await endpoint.accept(expect=remote_prefix, timeout=timeout, **opts)
