"""Forwarder daemon: hosts a :class:`Forwarder` on an asyncio event loop.

Faces feed whole packets into :meth:`ForwarderNode.receive`, which decodes,
runs the pipeline and hands the resulting packets to the outbound faces.
Applications register prefixes by sending an interest for
``/localhost/register/<prefix...>``; the node answers with a content packet.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

from .codec import (
    CONTENT,
    INTEREST,
    PIGGYBACK,
    DecodeError,
    Interest,
    decode_packet,
    encode_packet,
    make_content,
)
from .forwarder import DEFAULT_CS_CAPACITY, Forwarder
from .name import Name
from .transport import (
    DatagramEndpoint,
    Face,
    FaceError,
    FaceKind,
    FaceState,
    StreamFace,
    open_stream,
    parse_hostport,
)

log = logging.getLogger(__name__)

LOCALHOST = b"localhost"
REGISTER = b"register"
UNREGISTER = b"unregister"


class ConfigError(ValueError):
    pass


@dataclass
class NodeConfig:
    listens: list = field(default_factory=list)   # (kind, address)
    routes: list = field(default_factory=list)    # (prefix, kind, address)
    cs_capacity: int = DEFAULT_CS_CAPACITY
    decouple_piggybacks: bool = False


def _address(kind: str, text: str, lineno: int):
    if kind == "unix":
        return text
    try:
        return parse_hostport(text)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: {exc}") from None


def parse_config(text: str) -> NodeConfig:
    """Parse the line-oriented forwarder config.

    ::

        listen tcp 127.0.0.1:7001
        listen unix /tmp/ndn.sock
        route /ndn/b tcp 127.0.0.1:7002
        cs_capacity 1000
        decouple_piggybacks off
    """
    cfg = NodeConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        key, args = words[0], words[1:]
        if key == "listen":
            if len(args) != 2 or args[0] not in ("tcp", "udp", "unix"):
                raise ConfigError(f"line {lineno}: expected 'listen <udp|tcp|unix> <addr>'")
            cfg.listens.append((args[0], _address(args[0], args[1], lineno)))
        elif key == "route":
            if len(args) != 3 or args[1] not in ("tcp", "udp", "unix") or not args[0].startswith("/"):
                raise ConfigError(f"line {lineno}: expected 'route <prefix> <udp|tcp|unix> <addr>'")
            try:
                prefix = Name(args[0])
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
            cfg.routes.append((prefix, args[1], _address(args[1], args[2], lineno)))
        elif key == "cs_capacity":
            if len(args) != 1 or not args[0].isdigit():
                raise ConfigError(f"line {lineno}: cs_capacity takes a non-negative integer")
            cfg.cs_capacity = int(args[0])
        elif key == "decouple_piggybacks":
            if args not in (["on"], ["off"]):
                raise ConfigError(f"line {lineno}: decouple_piggybacks takes on|off")
            cfg.decouple_piggybacks = args[0] == "on"
        else:
            raise ConfigError(f"line {lineno}: unknown directive {key!r}")
    return cfg


class ForwarderNode:
    """Event-loop runtime for one forwarder.

    With ``measure_fpt`` set, the node records, for every packet that causes
    a transmission, the time from the end of frame assembly to the moment
    just before the first outbound write. Samples are ``(type, ns)`` pairs
    kept in :attr:`fpt_samples`.
    """

    def __init__(self, forwarder: Optional[Forwarder] = None, *, measure_fpt: bool = False,
                 expiry_interval: float = 0.5):
        self.forwarder = forwarder or Forwarder()
        self.faces: dict[int, Face] = {}
        self.measure_fpt = measure_fpt
        self.fpt_samples: list = []
        self.expiry_interval = expiry_interval
        self._servers: list = []
        self._endpoints: list = []
        self._tunnels: dict = {}
        self._expiry_handle = None
        self._counter_server = None

    # -- faces -----------------------------------------------------------

    def _attach(self, face: Face) -> int:
        face.id = self.forwarder.add_face(kind=face.kind.value, remote=face.remote)
        face.on_frame = self.receive
        face.on_down = self._face_down
        self.faces[face.id] = face
        self._ensure_expiry_timer()
        return face.id

    def _face_down(self, face: Face) -> None:
        if self.faces.pop(face.id, None) is not None:
            self.forwarder.remove_face(face.id)
        for key, fid in list(self._tunnels.items()):
            if fid == face.id:
                del self._tunnels[key]

    async def listen(self, kind: str, address):
        """Accept faces on ``address``. Returns the bound address."""
        loop = asyncio.get_running_loop()
        if kind == "udp":
            def new_face(endpoint, addr):
                face = endpoint.face_for(addr)
                self._attach(face)
                return face
            transport, endpoint = await loop.create_datagram_endpoint(
                lambda: DatagramEndpoint(new_face), local_addr=address)
            self._endpoints.append(endpoint)
            return transport.get_extra_info("sockname")[:2]

        face_kind = FaceKind.LOCAL_APP if kind == "unix" else FaceKind.STREAM

        def factory():
            return StreamFace(kind=face_kind, on_up=self._attach)

        if kind == "unix":
            server = await loop.create_unix_server(factory, address)
            self._servers.append(server)
            return address
        host, port = address
        server = await loop.create_server(factory, host, port)
        self._servers.append(server)
        return server.sockets[0].getsockname()[:2]

    async def open_face(self, kind: str, address, retry_for: float = 0.0) -> int:
        """Open an outgoing tunnel face and register it with the forwarder."""
        key = (kind, address)
        if key in self._tunnels:
            return self._tunnels[key]
        if kind == "udp":
            loop = asyncio.get_running_loop()
            try:
                transport, endpoint = await loop.create_datagram_endpoint(
                    lambda: DatagramEndpoint(), remote_addr=address)
            except OSError as exc:
                raise FaceError(f"cannot open udp face to {address}: {exc}") from exc
            self._endpoints.append(endpoint)
            face = endpoint.face_for(transport.get_extra_info("peername"))
            fid = self._attach(face)
        else:
            face = await open_stream(kind, address, lambda: StreamFace(remote=address, on_up=self._attach),
                                     retry_for)
            fid = face.id
        self._tunnels[key] = fid
        return fid

    def add_route(self, prefix, face_id: int) -> None:
        self.forwarder.fib_insert(Name(prefix), face_id)

    async def configure(self, cfg: NodeConfig, connect_timeout: float = 10.0) -> None:
        self.forwarder.cs.capacity = cfg.cs_capacity
        self.forwarder.decouple_piggybacks = cfg.decouple_piggybacks
        for kind, address in cfg.listens:
            await self.listen(kind, address)
        for prefix, kind, address in cfg.routes:
            fid = await self.open_face(kind, address, retry_for=connect_timeout)
            self.add_route(prefix, fid)

    # -- packet path -------------------------------------------------------

    def receive(self, face: Face, frame: bytes) -> None:
        t0 = time.perf_counter_ns()
        try:
            packet, _ = decode_packet(frame)
        except DecodeError as exc:
            log.debug("face %s: dropping undecodable packet (%s)", face.id, exc)
            return
        if (frame[0] == INTEREST and packet.name.components[:1] == (LOCALHOST,)):
            self._management(face, packet)
            return
        action = self.forwarder.process(packet, face.id, time.monotonic() * 1000.0)
        if not action.sends:
            return
        if self.measure_fpt:
            self.fpt_samples.append((frame[0], time.perf_counter_ns() - t0))
        faces = self.faces
        for targets, out in action.sends:
            data = frame if out is packet else encode_packet(out)
            for fid in targets:
                target = faces.get(fid)
                if target is None or target.state is not FaceState.UP:
                    continue
                try:
                    target.send(data)
                except (ConnectionError, ValueError) as exc:
                    log.debug("send on face %s failed: %s", fid, exc)

    def _management(self, face: Face, interest: Interest) -> None:
        comps = interest.name.components
        verb, prefix = (comps[1] if len(comps) > 1 else b""), Name(comps[2:])
        if verb == REGISTER:
            self.forwarder.fib_insert(prefix, face.id)
            status = b"ok"
        elif verb == UNREGISTER:
            self.forwarder.fib_remove(prefix, face.id)
            status = b"ok"
        else:
            status = b"unknown command"
        face.send(encode_packet(make_content(interest.name, status)))

    def _ensure_expiry_timer(self) -> None:
        if self._expiry_handle is None:
            loop = asyncio.get_running_loop()
            self._expiry_handle = loop.call_later(self.expiry_interval, self._expire)

    def _expire(self) -> None:
        self.forwarder.expire_pit(time.monotonic() * 1000.0)
        loop = asyncio.get_running_loop()
        self._expiry_handle = loop.call_later(self.expiry_interval, self._expire)

    # -- instrumentation ---------------------------------------------------

    def counters_text(self) -> str:
        return self.forwarder.snapshot_counters().dump()

    def fpt_text(self) -> str:
        names = {INTEREST: "I", CONTENT: "C", PIGGYBACK: "PB"}
        return "".join(f"{names[t]} {ns}\n" for t, ns in self.fpt_samples)

    def reset(self) -> None:
        self.forwarder.reset_counters()
        self.fpt_samples = []

    def flush(self) -> None:
        """Empty the content store and drop expired PIT entries."""
        self.forwarder.cs.clear()
        self.forwarder.expire_pit(time.monotonic() * 1000.0)

    async def serve_counters(self, path: str):
        """Serve ``dump``/``fpt``/``reset``/``flush`` line commands on a Unix socket."""

        async def handle(reader, writer):
            try:
                line = (await reader.readline()).decode().strip() or "dump"
                if line == "dump":
                    reply = self.counters_text()
                elif line == "fpt":
                    reply = self.fpt_text()
                elif line == "reset":
                    self.reset()
                    reply = "ok\n"
                elif line == "flush":
                    self.flush()
                    reply = "ok\n"
                else:
                    reply = f"error unknown command {line!r}\n"
                writer.write(reply.encode())
                await writer.drain()
            finally:
                writer.close()

        self._counter_server = await asyncio.start_unix_server(handle, path)
        return self._counter_server

    async def close(self) -> None:
        if self._expiry_handle is not None:
            self._expiry_handle.cancel()
            self._expiry_handle = None
        for face in list(self.faces.values()):
            face.close()
        for endpoint in self._endpoints:
            if endpoint.transport is not None:
                endpoint.transport.close()
        servers = list(self._servers)
        if self._counter_server is not None:
            servers.append(self._counter_server)
        for server in servers:
            server.close()
        for server in servers:
            await server.wait_closed()
        self._servers.clear()


async def query_counters(path: str, command: str = "dump") -> str:
    reader, writer = await asyncio.open_unix_connection(path)
    writer.write(command.encode() + b"\n")
    await writer.drain()
    data = await reader.read()
    writer.close()
    return data.decode()
