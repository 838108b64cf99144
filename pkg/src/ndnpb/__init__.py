"""NDN forwarder, overlay transport and session library with piggyback packets."""

from .client import Client, InterestTimeout
from .codec import (
    Content,
    DecodeError,
    Interest,
    Piggyback,
    bundle,
    decode_packet,
    encode_packet,
    make_content,
    make_interest,
    unbundle,
)
from .forwarder import Counters, Forwarder
from .name import Name
from .node import ForwarderNode, parse_config
from .session import Mode, Session, SessionFailed, TransferFailed, establish_session, window_size

__all__ = [
    "Client", "Content", "Counters", "DecodeError", "Forwarder", "ForwarderNode", "Interest",
    "InterestTimeout", "Mode", "Name", "Piggyback", "Session", "SessionFailed", "TransferFailed",
    "bundle", "decode_packet", "encode_packet", "establish_session", "make_content", "make_interest",
    "parse_config", "unbundle", "window_size",
]
