import csv
import json
import socket
import subprocess
import sys

import pytest

from ndnpb.bench import MetricsRecord

CLI = [sys.executable, "-m", "ndnpb.cli"]


def cli(*args, **kw):
    return subprocess.run(CLI + list(args), capture_output=True, text=True, timeout=kw.pop("timeout", 120), **kw)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def line_topology(tmp_path):
    """Three ndnfwd processes, configured from files, A - N3 - B."""
    pa, p3, pb = free_port(), free_port(), free_port()
    confs = {
        "a": f"listen tcp 127.0.0.1:{pa}\nlisten unix {tmp_path}/a.sock\nroute /ndn/b tcp 127.0.0.1:{p3}\n",
        "n3": f"listen tcp 127.0.0.1:{p3}\nroute /ndn/b tcp 127.0.0.1:{pb}\nroute /ndn/a tcp 127.0.0.1:{pa}\n",
        "b": f"listen tcp 127.0.0.1:{pb}\nlisten unix {tmp_path}/b.sock\nroute /ndn/a tcp 127.0.0.1:{p3}\n",
    }
    procs = []
    for name, text in confs.items():
        (tmp_path / f"{name}.conf").write_text(text)
        cmd = CLI + ["ndnfwd", "--config", str(tmp_path / f"{name}.conf")]
        if name == "n3":
            cmd += ["--counters-socket", str(tmp_path / "n3.ctl")]
        procs.append(subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True))
    try:
        for p in procs:
            assert "ready" in p.stdout.readline()
        yield tmp_path
    finally:
        for p in procs:
            p.terminate()
        for p in procs:
            p.wait(10)


def test_ndnfwd_bad_config_exits_2(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("listen carrier-pigeon somewhere\n")
    r = cli("ndnfwd", "--config", str(conf))
    assert r.returncode == 2
    assert "line 1" in r.stderr


def test_ndnfwd_missing_config_exits_2(tmp_path):
    assert cli("ndnfwd", "--config", str(tmp_path / "nope.conf")).returncode == 2


def test_ndnxfer_window_zero_is_usage_error():
    r = cli("ndnxfer", "--prefix", "/a", "--peer", "/b", "--window", "0")
    assert r.returncode == 2
    assert "--window" in r.stderr


def test_ndnxfer_unreachable_forwarder_exits_1(tmp_path):
    out = tmp_path / "m.json"
    r = cli("ndnxfer", "--prefix", "/a", "--peer", "/b", "--forwarder", f"unix:{tmp_path}/none.sock",
            "--out", str(out))
    assert r.returncode == 1
    assert json.loads(out.read_text())["ok"] is False


def xfer_pair(topo, mode, count, size, window=2, extra=()):
    common = ["--count", str(count), "--payload-size", str(size), "--window", str(window), "--mode", mode,
              "--linger", "0.2", *extra]
    responder = subprocess.Popen(CLI + ["ndnxfer", "--role", "responder", "--prefix", "/ndn/b", "--peer", "/ndn/a",
                                        "--forwarder", f"unix:{topo}/b.sock",
                                        "--out", str(topo / f"b-{mode}-{size}.json")] + common,
                                 stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    initiator = cli("ndnxfer", "--prefix", "/ndn/a", "--peer", "/ndn/b", "--forwarder", f"unix:{topo}/a.sock",
                    "--out", str(topo / f"a-{mode}-{size}.json"), *common)
    responder.wait(60)
    assert initiator.returncode == 0, initiator.stderr
    assert responder.returncode == 0, responder.stderr.read()
    load = lambda p: MetricsRecord.from_json((topo / p).read_text())  # noqa: E731
    return load(f"a-{mode}-{size}.json"), load(f"b-{mode}-{size}.json")


def test_ndnxfer_both_modes_over_three_processes(line_topology):
    recs = {mode: xfer_pair(line_topology, mode, 500, 1000) for mode in ("piggyback", "separate")}
    for mode, (a, b) in recs.items():
        assert a.ok and b.ok and a.received_count == b.received_count == 500
        assert a.received_digest == b.sent_digest and b.received_digest == a.sent_digest
    assert recs["piggyback"][0].received_digest == recs["separate"][0].received_digest
    assert recs["piggyback"][1].received_digest == recs["separate"][1].received_digest


@pytest.mark.parametrize("size", [100, 4000])
def test_ndnxfer_payload_sizes_structurally_identical(line_topology, size):
    a, b = xfer_pair(line_topology, "piggyback", 200, size)
    assert a.ok and b.ok
    assert a.payload_size == size and a.received_count == 200
    assert sorted(json.loads(a.to_json())) == sorted(json.loads(xfer_pair(line_topology, "piggyback", 200, 1000)[0]
                                                                .to_json()))


def test_ndnbench_in_process(tmp_path):
    out = tmp_path / "r.csv"
    r = cli("ndnbench", "--in-process", "--windows", "1,5", "--count", "100", "--payload-size", "100",
            "--repeats", "2", "--out", str(out), "--quiet")
    assert r.returncode == 0, r.stderr
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2 * 2 * 2
    summary = list(csv.DictReader(open(tmp_path / "r.summary.csv")))
    assert [int(s["w"]) for s in summary] == [1, 5]
    assert "fpt_gain_pct" in summary[0]


def test_ndnbench_self_hosted(tmp_path):
    out = tmp_path / "r.csv"
    r = cli("ndnbench", "--self-hosted", "--windows", "2", "--count", "100", "--payload-size", "100",
            "--repeats", "1", "--out", str(out), "--quiet")
    assert r.returncode == 0, r.stderr
    rows = list(csv.DictReader(open(out)))
    assert {(row["mode"], row["fib_lookups"], row["packets_rx"]) for row in rows} == {
        ("piggyback", "2", "202"), ("separate", "200", "400")}


def test_ndnbench_against_running_topology(line_topology, tmp_path):
    # external mode: endpoints in ndnbench, forwarders already running
    r = cli("ndnbench", "--windows", "1", "--count", "50", "--repeats", "1", "--out", str(tmp_path / "x.csv"),
            "--forwarder-a", f"unix:{line_topology}/a.sock", "--forwarder-b", f"unix:{line_topology}/b.sock",
            "--counters-socket", str(line_topology / "n3.ctl"), "--prefix-a", "/ndn/a", "--prefix-b", "/ndn/b",
            "--quiet")
    assert r.returncode == 0, r.stderr


def test_ndnbench_needs_a_topology():
    assert cli("ndnbench", "--windows", "1").returncode == 2
