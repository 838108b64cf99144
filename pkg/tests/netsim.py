"""Synchronous chain network used as a test harness for the forwarder.

    X --[R1]--[R2]-- ... --[Rk]-- Y

Each router has a left face (towards X) and a right face (towards Y). Packets
are delivered hop by hop until the network is quiet; whatever reaches an end
is recorded there.
"""

from collections import deque

from ndnpb.codec import Content, Interest, Piggyback
from ndnpb.forwarder import Forwarder
from ndnpb.name import Name


class Chain:
    def __init__(self, hops=1, x_prefix="/x", y_prefix="/y", **fwd_kwargs):
        self.routers = [Forwarder(**fwd_kwargs) for _ in range(hops)]
        self.left = []
        self.right = []
        for r in self.routers:
            self.left.append(r.add_face(kind="left"))
            self.right.append(r.add_face(kind="right"))
            r.fib_insert(Name(x_prefix), self.left[-1])
            r.fib_insert(Name(y_prefix), self.right[-1])
        self.delivered = {"X": [], "Y": []}
        self.sent_between = []  # (router index, side, packet) for every emitted packet

    def inject(self, end, packet, now=0.0):
        queue = deque()
        if end == "X":
            queue.append((0, self.left[0], packet))
        else:
            k = len(self.routers) - 1
            queue.append((k, self.right[k], packet))
        while queue:
            idx, face, pkt = queue.popleft()
            action = self.routers[idx].process(pkt, face, now)
            for faces, out in action.sends:
                for f in faces:
                    side = "L" if f == self.left[idx] else "R"
                    self.sent_between.append((idx, side, out))
                    if side == "L":
                        if idx == 0:
                            self.delivered["X"].append(out)
                        else:
                            queue.append((idx - 1, self.right[idx - 1], out))
                    else:
                        if idx == len(self.routers) - 1:
                            self.delivered["Y"].append(out)
                        else:
                            queue.append((idx + 1, self.left[idx + 1], out))


def observed(packets):
    """Endpoint-visible view of a packet list, piggybacks split into parts."""
    out = []
    for p in packets:
        if isinstance(p, Piggyback):
            out.extend(observed([p.content, p.interest]))
        elif isinstance(p, Content):
            out.append(("C", p.name, p.payload))
        elif isinstance(p, Interest):
            out.append(("I", p.name, p.nonce))
    return sorted(out, key=repr)
