import asyncio
import random

import pytest

from ndnpb.client import Client, DuplicatePending, InterestTimeout, NotConnected, parse_address
from ndnpb.codec import make_content, make_interest
from ndnpb.name import Name
from ndnpb.node import ForwarderNode

from live import run


async def single_node(tmp_path, n_clients=2):
    node = ForwarderNode()
    path = str(tmp_path / "fwd.sock")
    await node.listen("unix", path)
    clients = [await Client().connect(("unix", path)) for _ in range(n_clients)]
    return node, clients


async def close(node, clients):
    for c in clients:
        c.close()
    await node.close()


def test_parse_address():
    assert parse_address("tcp:127.0.0.1:7000") == ("tcp", ("127.0.0.1", 7000))
    assert parse_address("unix:/tmp/x.sock") == ("unix", "/tmp/x.sock")
    assert parse_address("localhost:9") == ("tcp", ("localhost", 9))


def test_register_and_dispatch(tmp_path):
    async def main():
        node, (alice, bob) = await single_node(tmp_path)
        seen = []
        await alice.register_prefix("/ndn/com/abc/alice/voice", seen.append)
        bob.express_interest("/ndn/com/abc/alice/voice/call/bob/0", lambda i, c: None)
        bob.express_interest("/ndn/com/abc/carol/voice/call/bob/0", lambda i, c: None)
        await asyncio.sleep(0.05)
        await close(node, [alice, bob])
        return seen

    seen = run(main())
    assert [str(i.name) for i in seen] == ["/ndn/com/abc/alice/voice/call/bob/0"]


def test_dispatch_longest_prefix_against_table_oracle(tmp_path):
    rnd = random.Random(3)
    prefixes = ["/p", "/p/q", "/p/q/r", "/s", "/s/t/u"]
    names = ["/" + "/".join(rnd.choice("pqrstu") for _ in range(rnd.randint(1, 4))) for _ in range(200)]

    def oracle(name):
        best = None
        for p in prefixes:
            if Name(p).is_prefix_of(Name(name)) and (best is None or len(Name(p)) > len(Name(best))):
                best = p
        return best

    async def main():
        node, (producer, consumer) = await single_node(tmp_path)
        hits = []
        for p in prefixes:
            await producer.register_prefix(p, lambda i, p=p: hits.append((str(i.name), p)))
        for n in dict.fromkeys(names):
            consumer.express_interest(n, lambda i, c: None, lifetime_ms=500)
        await asyncio.sleep(0.1)
        await close(node, [producer, consumer])
        return hits

    hits = run(main())
    expected = [(n, oracle(n)) for n in dict.fromkeys(names) if oracle(n) is not None]
    assert sorted(hits) == sorted(expected)


def test_express_then_content(tmp_path):
    async def main():
        node, (producer, consumer) = await single_node(tmp_path)
        await producer.register_prefix("/data", lambda i: producer.publish(make_content(i.name, b"hello")))
        content = await consumer.fetch("/data/1")
        pending = dict(consumer.pit)
        await close(node, [producer, consumer])
        return content, pending

    content, pending = run(main())
    assert content.payload == b"hello"
    assert pending == {}


def test_express_timeout_fires_at_deadline(tmp_path):
    async def main():
        node, (c,) = await single_node(tmp_path, 1)
        c.timeout_slack_ms = 0
        loop = asyncio.get_running_loop()
        fired = loop.create_future()
        t0 = loop.time()
        c.express_interest("/nobody/home", lambda i, d: None, lambda i: fired.set_result(loop.time() - t0),
                           lifetime_ms=150)
        elapsed = await fired
        await close(node, [c])
        return elapsed, c.pit

    elapsed, pit = run(main())
    assert 0.14 <= elapsed < 0.5
    assert pit == {}


def test_fetch_raises_interest_timeout(tmp_path):
    async def main():
        node, (c,) = await single_node(tmp_path, 1)
        try:
            with pytest.raises(InterestTimeout):
                await c.fetch("/void", lifetime_ms=50)
        finally:
            await close(node, [c])

    run(main())


def test_duplicate_pending(tmp_path):
    async def main():
        node, (c,) = await single_node(tmp_path, 1)
        c.express_interest("/x/1", lambda i, d: None, lifetime_ms=1000)
        with pytest.raises(DuplicatePending):
            c.express_interest("/x/1", lambda i, d: None)
        await close(node, [c])

    run(main())


def test_not_connected():
    c = Client()
    with pytest.raises(NotConnected):
        c.publish(make_content("/a"))
    with pytest.raises(NotConnected):
        c.express_interest("/a", lambda i, d: None)


def test_reply_piggyback_end_to_end(tmp_path):
    async def main():
        node, (alice, bob) = await single_node(tmp_path)
        loop = asyncio.get_running_loop()
        alice_got, bob_got = loop.create_future(), loop.create_future()
        alice_saw_interest = loop.create_future()

        def alice_serves(interest):
            alice_saw_interest.set_result(interest.name)
            alice.publish(make_content(interest.name, b"from alice"))

        def bob_serves(interest):
            # answer alice and ask for her data in one packet
            bob.reply_piggyback(make_content(interest.name, b"from bob"), make_interest("/alice/0"),
                                lambda i, c: bob_got.set_result(c.payload))

        await alice.register_prefix("/alice", alice_serves)
        await bob.register_prefix("/bob", bob_serves)
        alice.trace = []
        alice.express_interest("/bob/0", lambda i, c: alice_got.set_result(c.payload))
        result = await alice_got, await bob_got, await alice_saw_interest
        await close(node, [alice, bob])
        return result, alice.trace

    (a, b, name), trace = run(main())
    assert (a, b, str(name)) == (b"from bob", b"from alice", "/alice/0")
    kinds = [(d, k) for d, k, _ in trace]
    assert ("rx", "PB") in kinds


def test_reply_piggyback_timeout_like_express(tmp_path):
    async def main():
        node, (alice, bob) = await single_node(tmp_path)
        loop = asyncio.get_running_loop()
        timed_out = loop.create_future()
        bob.timeout_slack_ms = 0

        def bob_serves(interest):
            bob.reply_piggyback(make_content(interest.name, b"x"), make_interest("/nobody/0", lifetime_ms=100),
                                lambda i, c: None, lambda i: timed_out.set_result(str(i.name)))

        await bob.register_prefix("/bob", bob_serves)
        await alice.fetch("/bob/0")
        name = await timed_out
        await close(node, [alice, bob])
        return name

    assert run(main()) == "/nobody/0"


def test_unregister_stops_delivery(tmp_path):
    async def main():
        node, (producer, consumer) = await single_node(tmp_path)
        seen = []
        await producer.register_prefix("/gone", seen.append)
        producer.unregister_prefix("/gone")
        await asyncio.sleep(0.02)
        consumer.express_interest("/gone/1", lambda i, c: None, lifetime_ms=200)
        await asyncio.sleep(0.05)
        await close(node, [producer, consumer])
        return seen

    assert run(main()) == []
