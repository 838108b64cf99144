"""Command-line entry points: ``ndnfwd``, ``ndnxfer`` and ``ndnbench``."""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
import signal
import socket
import subprocess
import sys
import tempfile
import time
from typing import Optional

from .bench import (
    PREFIX_A,
    PREFIX_B,
    Endpoints,
    InProcessTopology,
    MetricsRecord,
    SocketProbe,
    make_items,
    payload_digest,
    sweep,
    write_csv,
    write_summary,
)
from .client import Client, parse_address
from .node import ConfigError, ForwarderNode, parse_config
from .session import Mode, SessionFailed, TransferFailed, establish_session
from .transport import FaceError

log = logging.getLogger("ndnpb")


def _logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper()), format="%(name)s: %(message)s")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def parse_windows(text: str) -> list:
    """``1..40``, ``1,2,5`` or a mix such as ``1..5,10,20``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        lo, sep, hi = part.partition("..")
        try:
            values = range(int(lo), int(hi) + 1) if sep else [int(part)]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad window list {text!r}") from None
        for w in values:
            if w < 1:
                raise argparse.ArgumentTypeError("window sizes must be >= 1")
            if w not in out:
                out.append(w)
    if not out:
        raise argparse.ArgumentTypeError("empty window list")
    return out


# -- ndnfwd ------------------------------------------------------------------

async def _run_forwarder(cfg, counters_socket: Optional[str], measure_fpt: bool) -> None:
    node = ForwarderNode(measure_fpt=measure_fpt)
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        loop.add_signal_handler(sig, stop.set)
    try:
        await node.configure(cfg)
        if counters_socket:
            if os.path.exists(counters_socket):
                os.unlink(counters_socket)
            await node.serve_counters(counters_socket)
        print("ndnfwd: ready", flush=True)
        await stop.wait()
    finally:
        await node.close()
        for kind, address in cfg.listens:
            if kind == "unix" and os.path.exists(address):
                os.unlink(address)
        if counters_socket and os.path.exists(counters_socket):
            os.unlink(counters_socket)


def ndnfwd(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ndnfwd", description="Run a forwarder.")
    ap.add_argument("--config", required=True, help="forwarder config file")
    ap.add_argument("--counters-socket", help="Unix socket serving counter dumps")
    ap.add_argument("--measure-fpt", action="store_true", help="record per-packet forwarding time")
    ap.add_argument("--log-level", default="warning")
    args = ap.parse_args(argv)
    _logging(args.log_level)
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except (OSError, ConfigError) as exc:
        print(f"ndnfwd: {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        asyncio.run(_run_forwarder(cfg, args.counters_socket, args.measure_fpt))
    except (FaceError, OSError) as exc:
        print(f"ndnfwd: {exc}", file=sys.stderr)
        return 1
    return 0


# -- ndnxfer -------------------------------------------------------------------

async def _transfer(args) -> MetricsRecord:
    rec = MetricsRecord(mode=args.mode, w=args.window, count=args.count, payload_size=args.payload_size)
    items = make_items(args.prefix, args.count, args.payload_size)
    rec.sent_digest = payload_digest(items)
    client = Client()
    await client.connect(parse_address(args.forwarder))
    try:
        session = await establish_session(client, args.prefix, args.peer, args.window, role=args.role,
                                          mode=args.mode, lifetime_ms=args.lifetime_ms,
                                          timeout=args.accept_timeout)
        try:
            received = await session.run_transfer(items, args.count)
        except TransferFailed as exc:
            received = exc.partial
            rec.ok, rec.error = False, str(exc)
        rec.tt = session.transfer_time
        rec.rtt_samples = list(session.rtt_samples_us)
        rec.received_digest = payload_digest(received)
        rec.received_count = len(received)
        if rec.ok:
            await asyncio.sleep(args.linger)  # keep serving the peer's last retransmissions
        session.close()
    finally:
        client.close()
    return rec


def ndnxfer(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ndnxfer", description="Bidirectional transfer endpoint.")
    ap.add_argument("--prefix", required=True, help="own name prefix")
    ap.add_argument("--peer", required=True, help="peer name prefix")
    ap.add_argument("--count", type=_positive_int, default=10_000)
    ap.add_argument("--payload-size", type=int, default=1000)
    ap.add_argument("--window", type=_positive_int, default=1)
    ap.add_argument("--mode", choices=[m.value for m in Mode], default="piggyback")
    ap.add_argument("--role", choices=["initiator", "responder"], default="initiator")
    ap.add_argument("--forwarder", default="tcp:127.0.0.1:6363", help="local forwarder (tcp:h:p or unix:/path)")
    ap.add_argument("--lifetime-ms", type=_positive_int, default=4000)
    ap.add_argument("--accept-timeout", type=float, default=60.0, help="responder wait for a call (s)")
    ap.add_argument("--linger", type=float, default=1.0)
    ap.add_argument("--out", help="metrics output file")
    ap.add_argument("--log-level", default="warning")
    args = ap.parse_args(argv)
    _logging(args.log_level)
    if args.payload_size < 0:
        ap.error("--payload-size must be >= 0")
    try:
        rec = asyncio.run(_transfer(args))
    except (FaceError, SessionFailed, ConnectionError) as exc:
        print(f"ndnxfer: {exc}", file=sys.stderr)
        rec = MetricsRecord(mode=args.mode, w=args.window, count=args.count, payload_size=args.payload_size,
                            ok=False, error=str(exc))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(rec.to_json())
    if not rec.ok:
        print(f"ndnxfer: transfer failed: {rec.error}", file=sys.stderr)
        return 1
    print(f"ndnxfer: {rec.received_count} items received, tt={rec.tt:.3f}s, digest={rec.received_digest[:16]}")
    return 0


# -- ndnbench ------------------------------------------------------------------

def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class SelfHosted:
    """Three ``ndnfwd`` processes in the line topology, on loopback."""

    def __init__(self, prefix_a: str = PREFIX_A, prefix_b: str = PREFIX_B, log_level: str = "warning"):
        self.prefix_a, self.prefix_b = prefix_a, prefix_b
        self.log_level = log_level
        self.dir = tempfile.TemporaryDirectory(prefix="ndnbench-")
        self.procs: list = []

    def _path(self, name: str) -> str:
        return os.path.join(self.dir.name, name)

    def configs(self) -> dict:
        ports = {n: _free_port() for n in ("a", "mid", "b")}
        tcp = {n: f"127.0.0.1:{p}" for n, p in ports.items()}
        pa, pb = self.prefix_a, self.prefix_b
        return {
            "a": f"listen tcp {tcp['a']}\nlisten unix {self._path('a.sock')}\nroute {pb} tcp {tcp['mid']}\n",
            "mid": f"listen tcp {tcp['mid']}\nroute {pa} tcp {tcp['a']}\nroute {pb} tcp {tcp['b']}\n",
            "b": f"listen tcp {tcp['b']}\nlisten unix {self._path('b.sock')}\nroute {pa} tcp {tcp['mid']}\n",
        }

    def start(self, timeout: float = 30.0) -> None:
        for name, text in self.configs().items():
            path = self._path(f"{name}.conf")
            with open(path, "w") as fh:
                fh.write(text)
            cmd = [sys.executable, "-m", "ndnpb.cli", "ndnfwd", "--config", path, "--log-level", self.log_level]
            cmd += ["--counters-socket", self._path(f"{name}.counters")]
            if name == "mid":
                cmd.append("--measure-fpt")
            self.procs.append(subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True))
        deadline = time.monotonic() + timeout
        for proc in self.procs:
            line = proc.stdout.readline()
            if "ready" not in line or time.monotonic() > deadline:
                self.stop()
                raise RuntimeError("forwarder failed to start")

    @property
    def counters_sockets(self) -> list:
        """Middle forwarder first."""
        return [self._path(f"{n}.counters") for n in ("mid", "a", "b")]

    @property
    def app_addresses(self) -> dict:
        return {"a": ("unix", self._path("a.sock")), "b": ("unix", self._path("b.sock"))}

    def stop(self) -> None:
        for proc in self.procs:
            if proc.poll() is None:
                proc.terminate()
        for proc in self.procs:
            try:
                proc.wait(5)
            except subprocess.TimeoutExpired:
                proc.kill()
        self.procs = []
        self.dir.cleanup()


async def _bench(args) -> dict:
    hosted = topo = None
    if args.self_hosted:
        hosted = SelfHosted(args.prefix_a, args.prefix_b, args.log_level)
        hosted.start()
        addrs, probe = hosted.app_addresses, SocketProbe(*hosted.counters_sockets)
    elif args.in_process:
        topo = await InProcessTopology().start()
        addrs, probe = topo.app_addresses, topo.probe()
    else:
        addrs = {"a": parse_address(args.forwarder_a), "b": parse_address(args.forwarder_b)}
        probe = SocketProbe(args.counters_socket)
    endpoints = None
    try:
        endpoints = await Endpoints(addrs["a"], addrs["b"], args.prefix_a, args.prefix_b).start()

        def progress(rec, repeat):
            if not args.quiet:
                state = "ok" if rec.ok else f"FAILED {rec.error}"
                print(f"w={rec.w:<3} {rec.mode:<9} #{repeat} fpt={rec.fpt_mean_us:7.2f}us "
                      f"tt={rec.tt or float('nan'):.3f}s {state}", file=sys.stderr, flush=True)

        return await sweep(endpoints, probe, args.windows, args.count, args.payload_size, args.repeats,
                           modes=args.modes, progress=progress)
    finally:
        if endpoints is not None:
            endpoints.close()
        if topo is not None:
            await topo.close()
        if hosted is not None:
            hosted.stop()


def ndnbench(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ndnbench", description="Window sweep, piggyback vs separate.")
    ap.add_argument("--windows", type=parse_windows, default=parse_windows("1..40"))
    ap.add_argument("--count", type=_positive_int, default=10_000)
    ap.add_argument("--payload-size", type=int, default=1000)
    ap.add_argument("--repeats", type=_positive_int, default=5)
    ap.add_argument("--modes", default="piggyback,separate")
    ap.add_argument("--out", default="results.csv")
    ap.add_argument("--summary", help="summary CSV (default: <out>.summary.csv)")
    where = ap.add_mutually_exclusive_group()
    where.add_argument("--self-hosted", action="store_true", help="spawn three ndnfwd processes")
    where.add_argument("--in-process", action="store_true", help="run the forwarders inside this process")
    ap.add_argument("--forwarder-a", help="forwarder for endpoint A (external topology)")
    ap.add_argument("--forwarder-b", help="forwarder for endpoint B (external topology)")
    ap.add_argument("--counters-socket", help="middle forwarder counters socket (external topology)")
    ap.add_argument("--prefix-a", default=PREFIX_A)
    ap.add_argument("--prefix-b", default=PREFIX_B)
    ap.add_argument("--quiet", action="store_true")
    ap.add_argument("--log-level", default="warning")
    args = ap.parse_args(argv)
    _logging(args.log_level)
    args.modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if any(m not in ("piggyback", "separate") for m in args.modes):
        ap.error("--modes takes piggyback and/or separate")
    if not (args.self_hosted or args.in_process) and not (args.forwarder_a and args.forwarder_b
                                                         and args.counters_socket):
        ap.error("give --self-hosted, --in-process, or --forwarder-a/--forwarder-b/--counters-socket")
    try:
        records = asyncio.run(_bench(args))
    except (FaceError, RuntimeError, OSError, SessionFailed) as exc:
        print(f"ndnbench: {exc}", file=sys.stderr)
        return 1
    write_csv(records, args.out)
    summary_path = args.summary or os.path.splitext(args.out)[0] + ".summary.csv"
    rows = write_summary(records, summary_path)
    if rows:
        print("w    fpt_pb_us  fpt_sep_us  fpt_gain%   tt_pb_s  tt_sep_s  tt_gain%")
        for r in rows:
            print(f"{r[0]:<4} {r[1]:>9}  {r[2]:>10}  {r[3]:>9}  {r[6]:>8}  {r[7]:>8}  {r[8]:>8}")
    failed = sum(not rec.ok for recs in records.values() for rec in recs)
    if failed:
        print(f"ndnbench: {failed} run(s) failed", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    commands = {"ndnfwd": ndnfwd, "ndnxfer": ndnxfer, "ndnbench": ndnbench}
    if not argv or argv[0] not in commands:
        print("usage: python -m ndnpb.cli {ndnfwd|ndnxfer|ndnbench} ...", file=sys.stderr)
        return 2
    return commands[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
