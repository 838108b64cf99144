"""Wire format for interest, content and piggyback packets.

Every packet is framed as ``type(1) | body_len(4) | body``, all integers
big-endian. Names are ``count(2) | (len(2) | bytes)*``.

    Interest   0x01  name | nonce(8) | lifetime_ms(4)
    Content    0x02  name | payload_len(3) | payload | freshness_ms(4)
                     | sig_len(2) | signature
    Piggyback  0x03  <framed content> | <framed interest>

A piggyback is a plain concatenation: both inner packets keep their own
framing and can be lifted out byte-for-byte.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from .name import MAX_COMPONENT_LEN, MAX_COMPONENTS, Name

INTEREST = 0x01
CONTENT = 0x02
PIGGYBACK = 0x03

HEADER_LEN = 5
DEFAULT_LIFETIME_MS = 4000
MAX_PAYLOAD = (1 << 24) - 1
MAX_SIGNATURE = 0xFFFF
MAX_U32 = 0xFFFFFFFF

_HDR = struct.Struct("!BI")
_U16 = struct.Struct("!H")
_U32 = struct.Struct("!I")


class EncodingOverflow(ValueError):
    """A field does not fit its length prefix."""


class DecodeError(ValueError):
    """Base class for classified decoder failures."""


class Truncated(DecodeError):
    pass


class Malformed(DecodeError):
    pass


class UnknownType(DecodeError):
    pass


@dataclass(frozen=True)
class Interest:
    name: Name
    nonce: bytes
    lifetime_ms: int = DEFAULT_LIFETIME_MS
    _wire: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.nonce) != 8:
            raise ValueError("nonce must be 8 bytes")
        if not 0 < self.lifetime_ms <= MAX_U32:
            raise ValueError("lifetime_ms must be a positive 32-bit value")


@dataclass(frozen=True)
class Content:
    name: Name
    payload: bytes = b""
    freshness_ms: int = 0
    signature: bytes = b""
    _wire: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True)
class Piggyback:
    content: Content
    interest: Interest
    _wire: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


Packet = Union[Interest, Content, Piggyback]


def new_nonce() -> bytes:
    return os.urandom(8)


def make_interest(name, lifetime_ms: int = DEFAULT_LIFETIME_MS, nonce: Optional[bytes] = None) -> Interest:
    return Interest(Name(name), nonce if nonce is not None else new_nonce(), lifetime_ms)


class KeyedHashSigner:
    """Default signer: HMAC-SHA256 over ``name | payload | freshness_ms``.

    Anything with matching ``sign``/``verify`` methods can be used instead.
    """

    def __init__(self, key: bytes):
        self._key = key

    @staticmethod
    def signed_portion(name: Name, payload: bytes, freshness_ms: int) -> bytes:
        return encode_name(name) + payload + _U32.pack(freshness_ms)

    def sign(self, name: Name, payload: bytes, freshness_ms: int) -> bytes:
        return hmac.new(self._key, self.signed_portion(name, payload, freshness_ms), hashlib.sha256).digest()

    def verify(self, content: Content) -> bool:
        expected = self.sign(content.name, content.payload, content.freshness_ms)
        return hmac.compare_digest(expected, content.signature)


def make_content(name, payload: bytes = b"", freshness_ms: int = 0, signer=None) -> Content:
    name = Name(name)
    sig = signer.sign(name, payload, freshness_ms) if signer is not None else b""
    return Content(name, payload, freshness_ms, sig)


# -- encoding ---------------------------------------------------------------

def encode_name(name: Name) -> bytes:
    comps = name.components
    if len(comps) > MAX_COMPONENTS:
        raise EncodingOverflow(f"{len(comps)} components exceed {MAX_COMPONENTS}")
    parts = [_U16.pack(len(comps))]
    for c in comps:
        if len(c) > MAX_COMPONENT_LEN:
            raise EncodingOverflow(f"component of {len(c)} bytes exceeds {MAX_COMPONENT_LEN}")
        parts.append(_U16.pack(len(c)))
        parts.append(c)
    return b"".join(parts)


def _frame(ptype: int, body: bytes) -> bytes:
    if len(body) > MAX_U32:
        raise EncodingOverflow("packet body exceeds 32-bit length")
    return _HDR.pack(ptype, len(body)) + body


def encode_packet(packet: Packet) -> bytes:
    if packet._wire is not None:
        return packet._wire
    if isinstance(packet, Interest):
        body = encode_name(packet.name) + packet.nonce + _U32.pack(packet.lifetime_ms)
        wire = _frame(INTEREST, body)
    elif isinstance(packet, Content):
        n = len(packet.payload)
        if n > MAX_PAYLOAD:
            raise EncodingOverflow(f"payload of {n} bytes exceeds {MAX_PAYLOAD}")
        if not 0 <= packet.freshness_ms <= MAX_U32:
            raise EncodingOverflow("freshness_ms out of 32-bit range")
        if len(packet.signature) > MAX_SIGNATURE:
            raise EncodingOverflow("signature exceeds 65535 bytes")
        body = b"".join((
            encode_name(packet.name),
            n.to_bytes(3, "big"),
            packet.payload,
            _U32.pack(packet.freshness_ms),
            _U16.pack(len(packet.signature)),
            packet.signature,
        ))
        wire = _frame(CONTENT, body)
    elif isinstance(packet, Piggyback):
        wire = _frame(PIGGYBACK, encode_packet(packet.content) + encode_packet(packet.interest))
    else:
        raise TypeError(f"cannot encode {type(packet).__name__}")
    object.__setattr__(packet, "_wire", wire)
    return wire


def bundle(content: Content, interest: Interest) -> Piggyback:
    return Piggyback(content, interest)


def unbundle(pb: Piggyback) -> tuple[Content, Interest]:
    return pb.content, pb.interest


# -- decoding ---------------------------------------------------------------
#
# The decoder works on an immutable ``bytes`` buffer so slices come out as
# bytes directly. Packet objects are filled in without re-running the
# constructors' checks; the decoder enforces the same rules itself.

_u16 = _U16.unpack_from
_u32 = _U32.unpack_from
_hdr = _HDR.unpack_from
_new = object.__new__


def decode_name(buf, offset: int = 0) -> tuple[Name, int]:
    """Decode a name at ``offset``; return it with the number of bytes consumed."""
    buf = bytes(buf)
    name, end = _decode_name(buf, offset, len(buf))
    return name, end - offset


def _decode_name(buf: bytes, pos: int, end: int) -> tuple[Name, int]:
    if pos + 2 > end:
        raise Truncated("name count")
    count = (buf[pos] << 8) | buf[pos + 1]
    pos += 2
    comps = []
    append = comps.append
    for _ in range(count):
        if pos + 2 > end:
            raise Truncated("component length")
        clen = (buf[pos] << 8) | buf[pos + 1]
        if clen == 0:
            raise Malformed("zero-length name component")
        pos += 2
        nxt = pos + clen
        if nxt > end:
            raise Truncated("component bytes")
        append(buf[pos:nxt])
        pos = nxt
    name = _new(Name)
    name.__dict__["components"] = tuple(comps)
    return name, pos


def _decode_interest(buf: bytes, pos: int, end: int) -> Interest:
    name, pos = _decode_name(buf, pos, end)
    if pos + 12 > end:
        raise Truncated("interest nonce/lifetime")
    if pos + 12 != end:
        raise Malformed("interest body length mismatch")
    (lifetime,) = _u32(buf, pos + 8)
    if lifetime == 0:
        raise Malformed("zero interest lifetime")
    packet = _new(Interest)
    packet.__dict__.update(name=name, nonce=buf[pos:pos + 8], lifetime_ms=lifetime, _wire=None)
    return packet


def _decode_content(buf: bytes, pos: int, end: int) -> Content:
    name, pos = _decode_name(buf, pos, end)
    if pos + 3 > end:
        raise Truncated("payload length")
    plen = int.from_bytes(buf[pos:pos + 3], "big")
    pos += 3
    if pos + plen > end:
        raise Truncated("payload")
    payload = buf[pos:pos + plen]
    pos += plen
    if pos + 6 > end:
        raise Truncated("freshness/signature length")
    (freshness,) = _u32(buf, pos)
    slen = (buf[pos + 4] << 8) | buf[pos + 5]
    pos += 6
    if pos + slen > end:
        raise Truncated("signature")
    if pos + slen != end:
        raise Malformed("content body length mismatch")
    packet = _new(Content)
    packet.__dict__.update(name=name, payload=payload, freshness_ms=freshness,
                           signature=buf[pos:end], _wire=None)
    return packet


def _decode_at(buf: bytes, pos: int, limit: int, keep_wire: bool = True) -> tuple[Packet, int]:
    if pos + HEADER_LEN > limit:
        raise Truncated("packet header")
    ptype, blen = _hdr(buf, pos)
    if ptype not in (INTEREST, CONTENT, PIGGYBACK):
        raise UnknownType(f"unknown packet type 0x{ptype:02x}")
    start = pos + HEADER_LEN
    end = start + blen
    if end > limit:
        raise Truncated("packet body")
    # the whole frame is present, so any overrun from here on is a bad body_len
    try:
        if ptype == INTEREST:
            packet: Packet = _decode_interest(buf, start, end)
        elif ptype == CONTENT:
            packet = _decode_content(buf, start, end)
        else:
            if start >= end or buf[start] != CONTENT:
                raise Malformed("piggyback body must start with a content packet")
            # nested parts re-encode lazily; the forwarder passes the bundle on whole
            content, cend = _decode_at(buf, start, end, False)
            if cend >= end or buf[cend] != INTEREST:
                raise Malformed("piggyback content must be followed by an interest packet")
            interest, iend = _decode_at(buf, cend, end, False)
            if iend != end:
                raise Malformed("piggyback body length mismatch")
            packet = _new(Piggyback)
            packet.__dict__.update(content=content, interest=interest, _wire=None)
    except Truncated as exc:
        raise Malformed(f"body shorter than its fields ({exc})") from None
    if keep_wire:
        packet.__dict__["_wire"] = buf if (pos == 0 and end == len(buf)) else buf[pos:end]
    return packet, end


def decode_packet(buf) -> tuple[Packet, int]:
    """Decode one framed packet from the start of ``buf``.

    Returns the packet and the number of bytes it occupied. Raises a
    :class:`DecodeError` subclass for anything that is not a valid packet.
    """
    if type(buf) is not bytes:
        buf = bytes(buf)
    return _decode_at(buf, 0, len(buf))


def peek_frame_length(buf, offset: int = 0) -> Optional[int]:
    """Total framed length of the packet starting at ``offset``, or None if the header is incomplete."""
    if len(buf) - offset < HEADER_LEN:
        return None
    ptype, blen = _HDR.unpack_from(buf, offset)
    if ptype not in (INTEREST, CONTENT, PIGGYBACK):
        raise UnknownType(f"unknown packet type 0x{ptype:02x}")
    return HEADER_LEN + blen


def packet_kind(packet: Packet) -> str:
    if isinstance(packet, Interest):
        return "I"
    if isinstance(packet, Content):
        return "C"
    return "PB"
