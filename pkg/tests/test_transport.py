import asyncio
import hashlib
import os
import random

import pytest

from ndnpb.codec import (
    CONTENT,
    INTEREST,
    bundle,
    decode_packet,
    encode_packet,
    make_content,
    make_interest,
)
from ndnpb.transport import (
    MAX_DATAGRAM,
    DatagramEndpoint,
    FaceError,
    FaceKind,
    FaceState,
    FrameAssembler,
    FramingError,
    Impairment,
    SendError,
    StreamFace,
    open_stream,
)


def frames(n, seed=0):
    rnd = random.Random(seed)
    out = []
    for i in range(n):
        if rnd.random() < 0.5:
            out.append(encode_packet(make_interest(f"/t/{i}")))
        else:
            out.append(encode_packet(make_content(f"/t/{i}", rnd.randbytes(rnd.randrange(0, 3000)))))
    return out


def test_assembler_back_to_back():
    fs = frames(50)
    asm = FrameAssembler()
    assert asm.feed(b"".join(fs)) == fs
    assert asm.pending == 0


@pytest.mark.parametrize("seed", range(5))
def test_assembler_arbitrary_chunking(seed):
    fs = frames(200, seed)
    stream = b"".join(fs)
    rnd = random.Random(seed)
    asm = FrameAssembler()
    got, pos = [], 0
    while pos < len(stream):
        step = rnd.choice([1, 2, 4, 5, 7, 100, 1500, 9000])
        got += asm.feed(stream[pos:pos + step])
        pos += step
    assert got == fs
    assert asm.pending == 0


def test_assembler_holds_partial_frame():
    f = encode_packet(make_interest("/a"))
    asm = FrameAssembler()
    assert asm.feed(f[:3]) == []
    assert asm.feed(f[3:-1]) == []
    assert asm.feed(f[-1:]) == [f]


def test_assembler_unknown_type_is_framing_error():
    with pytest.raises(FramingError):
        FrameAssembler().feed(b"\x09\x00\x00\x00\x00")


def test_assembler_cap():
    with pytest.raises(FramingError):
        FrameAssembler(max_buffer=100).feed(bytes([CONTENT]) + (1000).to_bytes(4, "big"))


def test_piggyback_frame_passes_whole():
    pb = encode_packet(bundle(make_content("/a/1", b"x"), make_interest("/b/1")))
    assert FrameAssembler().feed(pb + pb[:4]) == [pb]


async def _pair(kind="tcp", tmp_path=None):
    """A listening StreamFace and a connected one; returns (client_face, server_face, server)."""
    loop = asyncio.get_running_loop()
    accepted = loop.create_future()

    def factory():
        return StreamFace(on_up=lambda f: accepted.set_result(f), kind=FaceKind.LOCAL_APP if kind == "unix"
                          else FaceKind.STREAM)

    if kind == "unix":
        path = str(tmp_path / "s.sock")
        server = await loop.create_unix_server(factory, path)
        address = path
    else:
        server = await loop.create_server(factory, "127.0.0.1", 0)
        address = server.sockets[0].getsockname()[:2]
    client = await open_stream(kind, address, lambda: StreamFace(remote=address))
    return client, await accepted, server


@pytest.mark.parametrize("kind", ["tcp", "unix"])
def test_stream_byte_transparency(kind, tmp_path):
    # every frame sent arrives intact, in order, as one delivery
    fs = frames(10_000, seed=7)
    digest = hashlib.sha256(b"".join(fs)).hexdigest()

    async def main():
        client, server_face, server = await _pair(kind, tmp_path)
        got = []
        done = asyncio.get_running_loop().create_future()

        def on_frame(face, frame):
            got.append(frame)
            if len(got) == len(fs):
                done.set_result(None)

        server_face.on_frame = on_frame
        for f in fs:
            client.send(f)
        await asyncio.wait_for(done, 30)
        client.close()
        server.close()
        await server.wait_closed()
        return got

    got = asyncio.run(main())
    assert got == fs
    assert hashlib.sha256(b"".join(got)).hexdigest() == digest


def test_refused_connection_raises_face_error():
    async def main():
        s = await asyncio.get_running_loop().create_server(asyncio.Protocol, "127.0.0.1", 0)
        port = s.sockets[0].getsockname()[1]
        s.close()
        await s.wait_closed()
        with pytest.raises(FaceError):
            await open_stream("tcp", ("127.0.0.1", port), StreamFace, retry_for=0.1)

    asyncio.run(main())


def test_face_down_on_peer_close():
    async def main():
        client, server_face, server = await _pair()
        downs = []
        server_face.on_down = downs.append
        client.close()
        for _ in range(50):
            if downs:
                break
            await asyncio.sleep(0.01)
        server.close()
        await server.wait_closed()
        assert downs == [server_face]
        assert server_face.state is FaceState.DOWN
        with pytest.raises(ConnectionError):
            server_face.send(encode_packet(make_interest("/a")))

    asyncio.run(main())


def test_framing_error_closes_face():
    async def main():
        client, server_face, server = await _pair()
        client.transport.write(b"\x42garbage")
        for _ in range(50):
            if server_face.state is FaceState.DOWN:
                break
            await asyncio.sleep(0.01)
        server.close()
        await server.wait_closed()
        assert server_face.state is FaceState.DOWN

    asyncio.run(main())


def test_impairment_drop_and_delay():
    async def main():
        client, server_face, server = await _pair()
        got = []
        server_face.on_frame = lambda face, frame: got.append(decode_packet(frame)[0].name)
        client.impairment = Impairment(drop=lambda data: data[0] == INTEREST, delay_ms=30)
        client.send(encode_packet(make_interest("/dropped")))
        for i in range(3):
            client.send(encode_packet(make_content(f"/kept/{i}")))
        await asyncio.sleep(0.01)
        early = list(got)
        await asyncio.sleep(0.1)
        client.close()
        server.close()
        await server.wait_closed()
        return early, got, client.impairment.dropped

    early, got, dropped = asyncio.run(main())
    assert early == []
    assert [str(n) for n in got] == ["/kept/0", "/kept/1", "/kept/2"]
    assert dropped == 1


def test_datagram_one_packet_per_datagram():
    async def main():
        loop = asyncio.get_running_loop()
        got = []

        def new_face(endpoint, addr):
            face = endpoint.face_for(addr)
            face.on_frame = lambda f, frame: got.append(frame)
            return face

        t1, _ = await loop.create_datagram_endpoint(lambda: DatagramEndpoint(new_face),
                                                    local_addr=("127.0.0.1", 0))
        addr = t1.get_extra_info("sockname")[:2]
        t2, client_ep = await loop.create_datagram_endpoint(DatagramEndpoint, remote_addr=addr)
        face = client_ep.face_for(t2.get_extra_info("peername"))
        good = encode_packet(make_interest("/u/1"))
        face.send(good)
        t2.sendto(good + good)
        t2.sendto(good[:-1])
        with pytest.raises(SendError):
            face.send(encode_packet(make_content("/big", os.urandom(MAX_DATAGRAM))))
        face.send(good)
        await asyncio.sleep(0.05)
        t1.close()
        t2.close()
        return good, got

    good, got = asyncio.run(main())
    assert got == [good, good]
