"""Benchmark harness: the three-forwarder line topology and the window sweep.

Endpoint A attaches to forwarder ``fwd-a`` and endpoint B to ``fwd-b``; both
tunnel to the middle forwarder, which is where counters and forwarding
processing time (FPT) are read. The endpoints always run in the harness's
own event loop. The forwarders can live in the same loop (``InProcessTopology``)
or be external ``ndnfwd`` processes reached through their counters sockets.
"""

from __future__ import annotations

import asyncio
import contextlib
import csv
import gc
import hashlib
import json
import os
import statistics
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Optional

from .client import Client
from .codec import CONTENT, INTEREST, PIGGYBACK
from .forwarder import Counters, Forwarder
from .node import ForwarderNode, query_counters
from .session import Mode, TransferFailed, establish_session, session_endpoint

PREFIX_A = "/ndn/edu/xyz/alice"
PREFIX_B = "/ndn/edu/xyz/bob"

CSV_HEADER = ["mode", "w", "repeat", "fpt_mean_us", "fpt_p50_us", "rtt_mean_us", "tt_s",
              "fib_lookups", "packets_rx"]
SUMMARY_HEADER = ["w", "fpt_piggyback_us", "fpt_separate_us", "fpt_gain_pct", "rtt_piggyback_us",
                  "rtt_separate_us", "tt_piggyback_s", "tt_separate_s", "tt_gain_pct"]
_KIND = {INTEREST: "I", CONTENT: "C", PIGGYBACK: "PB"}


def make_items(prefix: str, count: int, size: int) -> list:
    """Deterministic payloads so both modes (and both processes) agree on content."""
    seed = prefix.encode()
    return [hashlib.shake_256(seed + b"/%d" % i).digest(size) for i in range(count)]


def payload_digest(items) -> str:
    h = hashlib.sha256()
    for item in items:
        h.update(len(item).to_bytes(4, "big"))
        h.update(item)
    return h.hexdigest()


def exchange_fpt(mode: str, samples) -> list:
    """Per-exchange-unit FPT in ns from raw ``(kind, ns)`` samples.

    A piggyback unit is one piggyback packet. A separate unit is a content
    packet plus an interest packet, paired in arrival order and summed.
    """
    if mode == Mode.PIGGYBACK.value:
        return [ns for kind, ns in samples if kind == "PB"]
    contents = [ns for kind, ns in samples if kind == "C"]
    interests = [ns for kind, ns in samples if kind == "I"]
    return [c + i for c, i in zip(contents, interests)]


def parse_fpt_text(text: str) -> list:
    out = []
    for line in text.splitlines():
        kind, ns = line.split()
        out.append((kind, int(ns)))
    return out


@dataclass
class MetricsRecord:
    mode: str
    w: int
    count: int
    payload_size: int
    fpt_samples: list = field(default_factory=list)   # µs per exchange unit
    rtt_samples: list = field(default_factory=list)   # µs
    tt: Optional[float] = None                        # s
    counters: dict = field(default_factory=dict)
    ok: bool = True
    error: str = ""
    sent_digest: str = ""
    received_digest: str = ""
    received_count: int = 0

    @property
    def fpt_mean_us(self) -> float:
        return statistics.fmean(self.fpt_samples) if self.fpt_samples else float("nan")

    @property
    def fpt_p50_us(self) -> float:
        return statistics.median(self.fpt_samples) if self.fpt_samples else float("nan")

    @property
    def rtt_mean_us(self) -> float:
        return statistics.fmean(self.rtt_samples) if self.rtt_samples else float("nan")

    def to_json(self) -> str:
        doc = asdict(self)
        doc.update(fpt_mean_us=self.fpt_mean_us, fpt_p50_us=self.fpt_p50_us, rtt_mean_us=self.rtt_mean_us)
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricsRecord":
        doc = json.loads(text)
        for key in ("fpt_mean_us", "fpt_p50_us", "rtt_mean_us"):
            doc.pop(key, None)
        return cls(**doc)

    def csv_row(self, repeat: int) -> list:
        return [self.mode, self.w, repeat, f"{self.fpt_mean_us:.3f}", f"{self.fpt_p50_us:.3f}",
                f"{self.rtt_mean_us:.1f}", f"{self.tt:.4f}" if self.tt is not None else "nan",
                self.counters.get("fib_lookups", ""), self.counters.get("packets_rx", "")]


# -- middle forwarder probes ---------------------------------------------------

class LocalProbe:
    def __init__(self, node: ForwarderNode, others=()):
        self.node = node
        self.others = list(others)

    async def reset(self) -> None:
        self.node.reset()

    async def flush(self) -> None:
        for node in [self.node] + self.others:
            node.flush()

    async def counters(self) -> Counters:
        return self.node.forwarder.snapshot_counters()

    async def fpt(self) -> list:
        return [(_KIND[t], ns) for t, ns in self.node.fpt_samples]


class SocketProbe:
    def __init__(self, *paths: str):
        self.path = paths[0]
        self.paths = paths

    async def reset(self) -> None:
        await query_counters(self.path, "reset")

    async def flush(self) -> None:
        for path in self.paths:
            await query_counters(path, "flush")

    async def counters(self) -> Counters:
        return Counters.parse(await query_counters(self.path, "dump"))

    async def fpt(self) -> list:
        return parse_fpt_text(await query_counters(self.path, "fpt"))


# -- topology ------------------------------------------------------------------

class InProcessTopology:
    """fwd-a <-> fwd-mid <-> fwd-b on loopback TCP, endpoints on Unix sockets, one event loop."""

    def __init__(self, *, measure_fpt: bool = True, decouple_piggybacks: bool = False,
                 cs_capacity: Optional[int] = None):
        self.measure_fpt = measure_fpt
        self.decouple = decouple_piggybacks
        self.cs_capacity = cs_capacity
        self.nodes: dict = {}
        self.app_addresses: dict = {}
        self._tmp = None

    def _node(self, name: str, measure: bool) -> ForwarderNode:
        fwd = Forwarder(decouple_piggybacks=self.decouple) if self.cs_capacity is None else \
            Forwarder(cs_capacity=self.cs_capacity, decouple_piggybacks=self.decouple)
        node = ForwarderNode(fwd, measure_fpt=measure)
        self.nodes[name] = node
        return node

    async def start(self) -> "InProcessTopology":
        self._tmp = tempfile.TemporaryDirectory(prefix="ndnpb-")
        a, mid, b = self._node("a", False), self._node("mid", self.measure_fpt), self._node("b", False)
        ports = {}
        for name, node in self.nodes.items():
            ports[name] = await node.listen("tcp", ("127.0.0.1", 0))
            path = os.path.join(self._tmp.name, f"{name}.sock")
            await node.listen("unix", path)
            self.app_addresses[name] = ("unix", path)
        a.add_route(PREFIX_B, await a.open_face("tcp", ports["mid"]))
        mid.add_route(PREFIX_B, await mid.open_face("tcp", ports["b"]))
        mid.add_route(PREFIX_A, await mid.open_face("tcp", ports["a"]))
        b.add_route(PREFIX_A, await b.open_face("tcp", ports["mid"]))
        return self

    @property
    def middle(self) -> ForwarderNode:
        return self.nodes["mid"]

    def probe(self) -> LocalProbe:
        return LocalProbe(self.middle, [n for n in self.nodes.values() if n is not self.middle])

    async def close(self) -> None:
        for node in self.nodes.values():
            await node.close()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None


class Endpoints:
    """The two applications, connected and registered."""

    def __init__(self, addr_a, addr_b, prefix_a: str = PREFIX_A, prefix_b: str = PREFIX_B):
        self.addr_a, self.addr_b = addr_a, addr_b
        self.prefix_a, self.prefix_b = prefix_a, prefix_b
        self.a = Client()
        self.b = Client()

    async def start(self) -> "Endpoints":
        await self.a.connect(self.addr_a)
        await self.b.connect(self.addr_b)
        await session_endpoint(self.a, self.prefix_a)
        await session_endpoint(self.b, self.prefix_b)
        return self

    async def open_sessions(self, mode: str, w: int, **opts) -> tuple:
        accept = asyncio.ensure_future(establish_session(self.b, self.prefix_b, self.prefix_a, w, role="responder",
                                                         mode=mode, timeout=30, **opts))
        try:
            sa = await establish_session(self.a, self.prefix_a, self.prefix_b, w, mode=mode, **opts)
        except BaseException:
            accept.cancel()
            raise
        return sa, await accept

    def close(self) -> None:
        self.a.close()
        self.b.close()


async def run_exchange(endpoints: Endpoints, probe, mode: str, w: int, count: int, payload_size: int,
                       items_a=None, items_b=None, **session_opts) -> tuple:
    """One measured bidirectional transfer. Returns (record, received_by_a, received_by_b)."""
    items_a = items_a if items_a is not None else make_items(endpoints.prefix_a, count, payload_size)
    items_b = items_b if items_b is not None else make_items(endpoints.prefix_b, count, payload_size)
    rec = MetricsRecord(mode=mode, w=w, count=count, payload_size=payload_size,
                        sent_digest=payload_digest(items_a))
    sa, sb = await endpoints.open_sessions(mode, w, **session_opts)
    await asyncio.sleep(0)
    await probe.reset()
    results = await asyncio.gather(sa.run_transfer(items_a, count), sb.run_transfer(items_b, count),
                                   return_exceptions=True)
    got_a, got_b = results
    for got in results:
        if isinstance(got, BaseException):
            rec.ok = False
            rec.error = f"{type(got).__name__}: {got}"
    if isinstance(got_a, TransferFailed):
        got_a = got_a.partial
    if isinstance(got_b, TransferFailed):
        got_b = got_b.partial
    if isinstance(got_a, BaseException) or isinstance(got_b, BaseException):
        raise got_a if isinstance(got_a, BaseException) else got_b
    ends = [s.t_end for s in (sa, sb) if s.t_end is not None]
    rec.tt = max(ends) - sa.t_start if ends else None
    rec.rtt_samples = list(sa.rtt_samples_us)
    rec.counters = (await probe.counters()).as_dict()
    rec.fpt_samples = [ns / 1000.0 for ns in exchange_fpt(mode, await probe.fpt())]
    rec.received_digest = payload_digest(got_a)
    rec.received_count = len(got_a)
    sa.close()
    sb.close()
    return rec, got_a, got_b


def _summary(records: dict) -> list:
    rows = []
    for w in sorted({w for _, w in records}):
        pb, sep = records.get(("piggyback", w)), records.get(("separate", w))
        if not pb or not sep:
            continue

        def mean(recs, attr):
            vals = [getattr(r, attr) for r in recs if r.ok and getattr(r, attr) is not None]
            return statistics.fmean(vals) if vals else float("nan")

        fp, fs = mean(pb, "fpt_mean_us"), mean(sep, "fpt_mean_us")
        tp, ts = mean(pb, "tt"), mean(sep, "tt")
        rows.append([w, f"{fp:.3f}", f"{fs:.3f}", f"{100 * (fs - fp) / fs:.2f}",
                     f"{mean(pb, 'rtt_mean_us'):.1f}", f"{mean(sep, 'rtt_mean_us'):.1f}",
                     f"{tp:.4f}", f"{ts:.4f}", f"{100 * (ts - tp) / ts:.2f}"])
    return rows


async def sweep(endpoints: Endpoints, probe, windows, count: int, payload_size: int, repeats: int,
                modes=("piggyback", "separate"), progress=None) -> dict:
    """Run every (mode, w) cell ``repeats`` times; returns {(mode, w): [MetricsRecord]}.

    Each run starts with empty content stores. The mode order flips on every
    repeat so slow drift in host state does not favour either mode.
    """
    items_a = make_items(endpoints.prefix_a, count, payload_size)
    items_b = make_items(endpoints.prefix_b, count, payload_size)
    records: dict = {}
    for w in windows:
        for repeat in range(repeats):
            for mode in (modes if repeat % 2 == 0 else tuple(reversed(modes))):
                await probe.flush()
                try:
                    with gc_paused():
                        rec, _, _ = await run_exchange(endpoints, probe, mode, w, count, payload_size,
                                                       items_a, items_b)
                except Exception as exc:  # establishment failure: flag the row and move on
                    rec = MetricsRecord(mode=mode, w=w, count=count, payload_size=payload_size, ok=False,
                                        error=f"{type(exc).__name__}: {exc}")
                records.setdefault((mode, w), []).append(rec)
                if progress is not None:
                    progress(rec, repeat)
    return records


def write_csv(records: dict, path: str) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CSV_HEADER + ["ok"])
        for (mode, w), recs in sorted(records.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            for repeat, rec in enumerate(recs):
                out.writerow(rec.csv_row(repeat) + [int(rec.ok)])


def write_summary(records: dict, path: str) -> list:
    rows = _summary(records)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(SUMMARY_HEADER)
        out.writerows(rows)
    return rows


def summary_rows(records: dict) -> list:
    return _summary(records)


@contextlib.contextmanager
def gc_paused():
    """Keep cyclic GC passes out of a measured run; collect afterwards."""
    was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()
        gc.collect()


