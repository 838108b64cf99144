"""Forwarding state machine: FIB, PIT, Content Store and packet pipelines.

The :class:`Forwarder` is transport-agnostic. Each ``process_*`` call takes a
decoded packet, the id of the face it arrived on and the current time in
milliseconds, mutates the tables and returns an :class:`Action` listing what
must be transmitted. Nothing here touches sockets or clocks.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .codec import Content, Interest, Packet, Piggyback
from .name import Name

FaceId = int

DEFAULT_CS_CAPACITY = 50_000


class ForwarderError(Exception):
    pass


class UnknownFace(ForwarderError):
    pass


class NoRoute(ForwarderError):
    pass


class Outcome(enum.Enum):
    FORWARD = "forward"
    CACHED_REPLY = "cached-reply"
    AGGREGATE = "aggregate"
    DISCARD = "discard"
    NO_ROUTE = "no-route"


@dataclass
class Action:
    """Result of running a packet through a pipeline.

    ``sends`` is a list of ``(faces, packet)`` pairs; the packet goes out on
    every face of its set.
    """

    outcome: Outcome
    sends: list = field(default_factory=list)

    @property
    def faces(self) -> frozenset:
        out: set = set()
        for faces, _ in self.sends:
            out |= faces
        return frozenset(out)

    @property
    def packets(self) -> list:
        return [pkt for _, pkt in self.sends]


@dataclass
class Counters:
    interests_rx: int = 0
    contents_rx: int = 0
    piggybacks_rx: int = 0
    fib_lookups: int = 0
    pit_inserts: int = 0
    pit_removals: int = 0
    pit_aggregations: int = 0
    pit_discards: int = 0
    cs_inserts: int = 0
    cs_hits: int = 0
    packets_tx: int = 0

    @property
    def packets_rx(self) -> int:
        return self.interests_rx + self.contents_rx + self.piggybacks_rx

    def copy(self) -> "Counters":
        return Counters(**asdict(self))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["packets_rx"] = self.packets_rx
        return d

    def dump(self) -> str:
        """One ``key=value`` line per counter."""
        return "".join(f"{k}={v}\n" for k, v in self.as_dict().items())

    @classmethod
    def parse(cls, text: str) -> "Counters":
        known = {f.name for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            key, sep, value = line.partition("=")
            if sep and key.strip() in known:
                values[key.strip()] = int(value)
        return cls(**values)


class Fib:
    """Longest-prefix-match table, one entry per prefix holding a face set."""

    def __init__(self):
        self._entries: dict[tuple, set] = {}
        self._depth = 0  # longest prefix present; lookups start there

    def insert(self, prefix: Name, face: FaceId) -> None:
        self._entries.setdefault(prefix.components, set()).add(face)
        self._depth = max(self._depth, len(prefix.components))

    def remove(self, prefix: Name, face: Optional[FaceId] = None) -> None:
        key = prefix.components
        if key not in self._entries:
            return
        if face is None:
            del self._entries[key]
            self._reset_depth()
            return
        self._entries[key].discard(face)
        if not self._entries[key]:
            del self._entries[key]
        self._reset_depth()

    def _reset_depth(self) -> None:
        self._depth = max((len(k) for k in self._entries), default=0)

    def remove_face(self, face: FaceId) -> None:
        for key in list(self._entries):
            self._entries[key].discard(face)
            if not self._entries[key]:
                del self._entries[key]
        self._reset_depth()

    def lookup(self, name: Name) -> frozenset:
        comps = name.components
        entries = self._entries
        for n in range(min(len(comps), self._depth), -1, -1):
            faces = entries.get(comps[:n])
            if faces:
                return frozenset(faces)
        raise NoRoute(str(name))

    def items(self):
        return [(Name(k), frozenset(v)) for k, v in self._entries.items()]

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class PitEntry:
    name: Name
    arrival_faces: set
    nonces: set
    expiry: float


@dataclass
class CacheEntry:
    content: Content
    inserted_at: float
    last_used: float


class ContentStore:
    """Exact-name cache with LRU eviction."""

    def __init__(self, capacity: int = DEFAULT_CS_CAPACITY):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._store: OrderedDict[Name, CacheEntry] = OrderedDict()

    def insert(self, content: Content, now: float = 0.0) -> None:
        if self.capacity == 0:
            return
        store = self._store
        if content.name in store:
            store.move_to_end(content.name)
            store[content.name] = CacheEntry(content, now, now)
            return
        if len(store) >= self.capacity:
            store.popitem(last=False)
        store[content.name] = CacheEntry(content, now, now)

    def lookup(self, name: Name, now: float = 0.0) -> Optional[Content]:
        entry = self._store.get(name)
        if entry is None:
            return None
        self._store.move_to_end(name)
        entry.last_used = now
        return entry.content

    def __contains__(self, name: Name) -> bool:
        return name in self._store

    def __len__(self) -> int:
        return len(self._store)

    def clear(self) -> None:
        self._store.clear()


class Forwarder:
    """NDN router state machine.

    ``decouple_piggybacks`` makes the router split every piggyback into its
    content and interest and handle them as separate packets. ``verifier``,
    when given, is used to drop content whose signature does not check out.
    """

    def __init__(self, cs_capacity: int = DEFAULT_CS_CAPACITY, decouple_piggybacks: bool = False,
                 verifier=None):
        self.fib = Fib()
        self.pit: dict[Name, PitEntry] = {}
        self.cs = ContentStore(cs_capacity)
        self.counters = Counters()
        self.decouple_piggybacks = decouple_piggybacks
        self.verifier = verifier
        self.faces: dict[FaceId, dict] = {}
        self._next_face = 1

    # -- faces -----------------------------------------------------------

    def add_face(self, **info) -> FaceId:
        face = self._next_face
        self._next_face += 1
        self.faces[face] = info
        return face

    def remove_face(self, face: FaceId) -> None:
        if self.faces.pop(face, None) is None:
            return
        self.fib.remove_face(face)
        for name in list(self.pit):
            entry = self.pit[name]
            entry.arrival_faces.discard(face)
            if not entry.arrival_faces:
                del self.pit[name]
                self.counters.pit_removals += 1

    def _check_face(self, face: FaceId) -> None:
        if face not in self.faces:
            raise UnknownFace(face)

    # -- FIB -------------------------------------------------------------

    def fib_insert(self, prefix, face: FaceId) -> None:
        self._check_face(face)
        self.fib.insert(Name(prefix), face)

    def fib_remove(self, prefix, face: Optional[FaceId] = None) -> None:
        self.fib.remove(Name(prefix), face)

    def fib_lookup(self, name: Name) -> frozenset:
        self.counters.fib_lookups += 1
        return self.fib.lookup(name)

    # -- CS --------------------------------------------------------------

    def cs_insert(self, content: Content, now: float) -> None:
        self.cs.insert(content, now)
        self.counters.cs_inserts += 1

    def cs_lookup(self, name: Name, now: float = 0.0) -> Optional[Content]:
        content = self.cs.lookup(name, now)
        if content is not None:
            self.counters.cs_hits += 1
        return content

    # -- PIT -------------------------------------------------------------

    def _pit_get(self, name: Name, now: float) -> Optional[PitEntry]:
        entry = self.pit.get(name)
        if entry is not None and entry.expiry <= now:
            del self.pit[name]
            self.counters.pit_removals += 1
            return None
        return entry

    def expire_pit(self, now: float) -> int:
        expired = [n for n, e in self.pit.items() if e.expiry <= now]
        for name in expired:
            del self.pit[name]
        self.counters.pit_removals += len(expired)
        return len(expired)

    # -- pipelines -------------------------------------------------------

    def process(self, packet: Packet, arrival: FaceId, now: float) -> Action:
        if isinstance(packet, Interest):
            return self.process_interest(packet, arrival, now)
        if isinstance(packet, Content):
            return self.process_content(packet, arrival, now)
        return self.process_piggyback(packet, arrival, now)

    def process_interest(self, interest: Interest, arrival: FaceId, now: float) -> Action:
        self._check_face(arrival)
        self.counters.interests_rx += 1
        return self._emit(self._interest(interest, arrival, now, None))

    def process_content(self, content: Content, arrival: FaceId, now: float) -> Action:
        self._check_face(arrival)
        self.counters.contents_rx += 1
        return self._emit(self._content(content, arrival, now))

    def process_piggyback(self, pb: Piggyback, arrival: FaceId, now: float) -> Action:
        self._check_face(arrival)
        self.counters.piggybacks_rx += 1
        return self._emit(self._piggyback(pb, arrival, now))

    def _emit(self, action: Action) -> Action:
        self.counters.packets_tx += sum(len(faces) for faces, _ in action.sends)
        return action

    def _interest(self, interest: Interest, arrival: FaceId, now: float, route) -> Action:
        name = interest.name
        cached = self.cs_lookup(name, now)
        if cached is not None:
            return Action(Outcome.CACHED_REPLY, [(frozenset((arrival,)), cached)])

        entry = self._pit_get(name, now)
        expiry = now + interest.lifetime_ms
        if entry is not None:
            if arrival in entry.arrival_faces or interest.nonce in entry.nonces:
                self.counters.pit_discards += 1
                return Action(Outcome.DISCARD)
            entry.arrival_faces.add(arrival)
            entry.nonces.add(interest.nonce)
            entry.expiry = max(entry.expiry, expiry)
            self.counters.pit_aggregations += 1
            return Action(Outcome.AGGREGATE)

        self.pit[name] = PitEntry(name, {arrival}, {interest.nonce}, expiry)
        self.counters.pit_inserts += 1
        if route is None:
            try:
                route = self.fib_lookup(name)
            except NoRoute:
                return Action(Outcome.NO_ROUTE)
        out = route - {arrival}
        if not out:
            return Action(Outcome.NO_ROUTE)
        return Action(Outcome.FORWARD, [(out, interest)])

    def _content(self, content: Content, arrival: FaceId, now: float) -> Action:
        entry = self._pit_get(content.name, now)
        if entry is None:
            return Action(Outcome.DISCARD)
        if self.verifier is not None and not self.verifier.verify(content):
            return Action(Outcome.DISCARD)
        self.cs_insert(content, now)
        del self.pit[content.name]
        self.counters.pit_removals += 1
        out = frozenset(entry.arrival_faces - {arrival})
        if not out:
            return Action(Outcome.DISCARD)
        return Action(Outcome.FORWARD, [(out, content)])

    def _piggyback(self, pb: Piggyback, arrival: FaceId, now: float) -> Action:
        content, interest = pb.content, pb.interest
        entry = None if self.decouple_piggybacks else self._pit_get(content.name, now)
        if (entry is None or arrival in entry.arrival_faces
                or (self.verifier is not None and not self.verifier.verify(content))):
            # Decoupled handling: the interest gets the ordinary treatment,
            # including a FIB lookup.
            first = self._content(content, arrival, now)
            second = self._interest(interest, arrival, now, None)
            outcome = second.outcome if first.outcome is Outcome.DISCARD else first.outcome
            return Action(outcome, first.sends + second.sends)

        targets = frozenset(entry.arrival_faces)
        self.cs_insert(content, now)                              # p.3
        inner = self._interest(interest, arrival, now, targets)   # p.4, no FIB
        del self.pit[content.name]                                # p.5
        self.counters.pit_removals += 1
        if inner.outcome is Outcome.FORWARD:
            return Action(Outcome.FORWARD, [(targets, pb)])       # p.6
        # The interest part was absorbed (cached, duplicate or aggregated):
        # only the content continues, exactly as if it had arrived alone.
        return Action(Outcome.FORWARD, [(targets, content)] + inner.sends)

    # -- introspection ---------------------------------------------------

    def snapshot_counters(self) -> Counters:
        return self.counters.copy()

    def reset_counters(self) -> None:
        self.counters = Counters()
