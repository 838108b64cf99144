"""Random packet generators shared by the test modules."""

import random

from ndnpb.codec import Content, Interest, Piggyback
from ndnpb.name import Name


def random_name(rng: random.Random, max_comps: int = 6, max_len: int = 12) -> Name:
    n = rng.randint(0, max_comps)
    return Name(bytes(rng.getrandbits(8) for _ in range(rng.randint(1, max_len))) for _ in range(n))


def random_interest(rng: random.Random) -> Interest:
    return Interest(random_name(rng), rng.getrandbits(64).to_bytes(8, "big"), rng.randint(1, 0xFFFFFFFF))


def random_content(rng: random.Random, max_payload: int = 300) -> Content:
    payload = rng.randbytes(rng.randint(0, max_payload))
    sig = rng.randbytes(rng.choice((0, 32, rng.randint(0, 80))))
    return Content(random_name(rng), payload, rng.randint(0, 0xFFFFFFFF), sig)


def random_packet(rng: random.Random):
    kind = rng.randrange(3)
    if kind == 0:
        return random_interest(rng)
    if kind == 1:
        return random_content(rng)
    return Piggyback(random_content(rng), random_interest(rng))


def reencode(packet) -> bytes:
    """Encode a structurally equal copy that carries no cached wire bytes."""
    from ndnpb.codec import encode_packet

    if isinstance(packet, Interest):
        return encode_packet(Interest(packet.name, packet.nonce, packet.lifetime_ms))
    if isinstance(packet, Content):
        return encode_packet(Content(packet.name, packet.payload, packet.freshness_ms, packet.signature))
    inner = reencode(packet.content) + reencode(packet.interest)
    return b"\x03" + len(inner).to_bytes(4, "big") + inner


def mutate(rng: random.Random, wire: bytes) -> bytes:
    """Apply one to three random byte-level edits."""
    buf = bytearray(wire)
    for _ in range(rng.randint(1, 3)):
        op = rng.randrange(6)
        pos = rng.randrange(len(buf) + 1)
        if op == 0 and buf:
            buf[pos % len(buf)] ^= 1 << rng.randrange(8)
        elif op == 1 and buf:
            buf[pos % len(buf)] = rng.getrandbits(8)
        elif op == 2:
            del buf[pos:]
        elif op == 3:
            buf[pos:pos] = rng.randbytes(rng.randint(1, 8))
        elif op == 4:
            del buf[pos:pos + rng.randint(1, 8)]
        elif len(buf) >= 5:
            # rewrite a 4-byte length field near a frame header
            at = rng.choice((1, min(len(buf) - 4, rng.randrange(len(buf)))))
            buf[at:at + 4] = rng.choice((0, 1, len(buf), 0xFFFFFFFF, rng.getrandbits(32))).to_bytes(4, "big")
    return bytes(buf)
