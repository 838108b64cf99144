"""Hierarchical NDN names."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

MAX_COMPONENTS = 0xFFFF
MAX_COMPONENT_LEN = 0xFFFF

Component = Union[bytes, str, int]


def _component(value: Component) -> bytes:
    if isinstance(value, bytes):
        return value
    if isinstance(value, (bytearray, memoryview)):
        return bytes(value)
    if isinstance(value, int):
        return str(value).encode()
    return value.encode("utf-8")


@dataclass(frozen=True)
class Name:
    """An ordered sequence of non-empty byte-string components.

    ``Name("/ndn/usa/cnn")`` parses a URI-style string; ``Name.of(b"a", "b", 3)``
    builds one from individual components.
    """

    components: tuple[bytes, ...] = ()

    def __init__(self, value: Union[str, Iterable[Component], "Name", None] = None):
        if value is None:
            comps: tuple[bytes, ...] = ()
        elif isinstance(value, Name):
            comps = value.components
        elif isinstance(value, str):
            comps = tuple(p.encode("utf-8") for p in value.split("/") if p)
        else:
            comps = tuple(_component(c) for c in value)
        if any(len(c) == 0 for c in comps):
            raise ValueError("name components must be non-empty")
        object.__setattr__(self, "components", comps)

    @classmethod
    def of(cls, *components: Component) -> "Name":
        return cls(components)

    def __hash__(self) -> int:
        # names are hashed on every table access; cache it on the instance
        h = self.__dict__.get("_hash")
        if h is None:
            h = self.__dict__["_hash"] = hash(self.components)
        return h

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return Name(self.components[index])
        return self.components[index]

    def __iter__(self):
        return iter(self.components)

    def __add__(self, other) -> "Name":
        if isinstance(other, Name):
            return Name(self.components + other.components)
        if isinstance(other, (bytes, str, int)):
            return Name(self.components + (_component(other),))
        return Name(self.components + tuple(_component(c) for c in other))

    def append(self, *components: Component) -> "Name":
        return Name(self.components + tuple(_component(c) for c in components))

    def is_prefix_of(self, other: "Name") -> bool:
        n = len(self.components)
        return n <= len(other.components) and other.components[:n] == self.components

    def __str__(self) -> str:
        if not self.components:
            return "/"
        return "".join("/" + c.decode("utf-8", "backslashreplace") for c in self.components)

    def __repr__(self) -> str:
        return f"Name({str(self)!r})"
