import json
import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hopredict import dataset, pipeline, radiosim, seqmodel, xapp
from hopredict.dataset import WindowSpec
from hopredict.radiosim import CellSite, RadioEnv, UeTrack

from conftest import make_trace

K, T = 4, 3


@pytest.fixture(scope="module")
def small_trace():
    cells = [CellSite("a", (0, 0)), CellSite("b", (60, 0)), CellSite("c", (30, 50))]
    ues = [UeTrack("u1", [((0, 0), 0), ((25, 0), 6.0)], "circular"),
           UeTrack("u2", [((0, 0), 8.0)], "random-waypoint", area=(-30, -30, 90, 80))]
    return radiosim.generate_trace(cells, ues, RadioEnv(seed=3), 120, arena=(-200, -200, 300, 300))


@pytest.fixture(scope="module")
def model_file(tmp_path_factory):
    w = seqmodel.init_weights(seqmodel.ModelSpec(), 5)
    path = tmp_path_factory.mktemp("m") / "weights.json"
    meta = pipeline.weight_metadata(w, WindowSpec(K, T), {"No-HO": 0.6, "HO": 3.0}, 5,
                                    seqmodel.TrainConfig())
    seqmodel.save_weights(path, w, meta)
    return path


def _replay_lines(trace, tmp_path, rate=0):
    path = tmp_path / "trace.csv"
    radiosim.write_trace(trace, path)
    lines = []
    xapp.replay(path, rate, lines.append)
    return lines


def _serve(model_file, lines, threshold=0.5):
    out = []
    svc = xapp.XAppService.from_file(model_file, threshold)
    svc.run(lines, lambda r: out.append(json.loads(r.to_json())))
    return out, svc.stats


# --- messages ---------------------------------------------------------------------

def test_message_round_trip(small_trace):
    s = small_trace[7]
    seq, back = xapp.parse_message(xapp.encode_message(xapp.sample_to_message(s, 42)))
    assert seq == 42 and back == s


def test_message_fields_follow_trace_columns():
    msg = xapp.sample_to_message(make_trace("u", [0])[0], 0)
    assert list(msg) == xapp.MESSAGE_FIELDS


@pytest.mark.parametrize("mutate", [
    lambda m: m.pop("s_rsrp"),
    lambda m: m.update(s_rsrp=-30.0),
    lambda m: m.update(seq="1"),
    lambda m: m.update(ts=1.5),
    lambda m: m.update(ue_id=""),
    lambda m: m.update(ho=2),
    lambda m: m.update(n1_sinr=float("nan")),
])
def test_schema_violations(mutate):
    msg = xapp.sample_to_message(make_trace("u", [0])[0], 0)
    mutate(msg)
    with pytest.raises(xapp.SchemaError):
        xapp.parse_message(json.dumps(msg))


# --- replay -----------------------------------------------------------------------

def test_replay_as_fast_as_possible_keeps_order(tmp_path):
    trace = make_trace("u", range(100))
    lines = _replay_lines(trace, tmp_path)
    assert len(lines) == 100
    got = [xapp.parse_message(l) for l in lines]
    assert [s.ts for _, s in got] == list(range(100))
    assert [q for q, _ in got] == list(range(100))


def test_replay_interleaves_ues_by_timestamp(small_trace, tmp_path):
    lines = _replay_lines(small_trace, tmp_path)
    ts = [xapp.parse_message(l)[1].ts for l in lines]
    assert ts == sorted(ts)
    assert len(lines) == len(small_trace)


def test_replay_malformed_row_aborts_with_line(tmp_path):
    path = tmp_path / "bad.csv"
    radiosim.write_trace(make_trace("u", range(5)), path)
    rows = path.read_text().splitlines()
    rows[3] = rows[3].replace(rows[3].split(",")[3], "oops", 1)
    path.write_text("\n".join(rows) + "\n")
    sent = []
    with pytest.raises(radiosim.TraceFormatError, match="line 4"):
        xapp.replay(path, 0, sent.append)
    assert sent == []


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def __call__(self):
        return self.now

    def sleep(self, dt):
        self.sleeps.append(dt)
        self.now += dt


@pytest.mark.parametrize("rate", [1.0, 10.0])
def test_replay_pacing_follows_timestamps(tmp_path, rate):
    path = tmp_path / "t.csv"
    radiosim.write_trace(make_trace("u", range(50)), path)
    clock = FakeClock()
    stamps = []
    xapp.replay(path, rate, lambda b: stamps.append(clock.now), clock=clock, sleep=clock.sleep)
    assert stamps[-1] == pytest.approx(49 / rate)
    assert np.allclose(np.diff(stamps), 1 / rate)


def test_replay_retries_then_succeeds(tmp_path):
    path = tmp_path / "t.csv"
    radiosim.write_trace(make_trace("u", range(3)), path)
    fails = {"n": 2}
    got = []

    def flaky(data):
        if fails["n"]:
            fails["n"] -= 1
            raise ConnectionError("down")
        got.append(data)
    clock = FakeClock()
    assert xapp.replay(path, 0, flaky, clock=clock, sleep=clock.sleep) == 3
    assert len(got) == 3 and clock.sleeps == [0.05, 0.1]


def test_replay_gives_up_after_bounded_backoff(tmp_path):
    path = tmp_path / "t.csv"
    radiosim.write_trace(make_trace("u", range(3)), path)

    def dead(data):
        raise BrokenPipeError("gone")
    clock = FakeClock()
    with pytest.raises(xapp.ReplayError, match="after 4 attempts"):
        xapp.replay(path, 0, dead, retries=3, clock=clock, sleep=clock.sleep)
    assert len(clock.sleeps) == 3


# --- serve ------------------------------------------------------------------------

def test_stream_matches_offline_windows_bit_exactly(small_trace, model_file, tmp_path):
    lines = _replay_lines(small_trace, tmp_path)
    decisions, stats = _serve(model_file, lines, threshold=0.5)
    weights, _ = seqmodel.load_weights(model_file)
    # offline windows with a zero horizon tail: streaming scores every full window
    ws = dataset.build_windows(small_trace, WindowSpec(K, 1))
    tail = {ue: max(s.ts for s in small_trace if s.ue_id == ue) for ue in ("u1", "u2")}
    offline = dict(zip(zip(ws.ue_ids.tolist(), ws.end_ts.tolist()), pipeline.score(weights, ws)))
    online = {(d["ue_id"], d["timestamp"]): d for d in decisions}
    # every offline window is scored online with the identical double
    for key, p in offline.items():
        assert online[key]["p_ho"] == p
        assert online[key]["decision"] == int(p >= 0.5)
    # the stream also scores the last tick of each UE, which has no horizon offline
    assert set(online) - set(offline) == {(ue, ts) for ue, ts in tail.items()}
    assert stats.dropped == 0 and stats.gaps == 0
    assert all(d["horizon_t"] == T for d in decisions)
    version = seqmodel.load_weights(model_file)[1]["model_version"]
    assert {d["model_version"] for d in decisions} == {version}


def test_interleaved_ues_match_separate_runs(small_trace, model_file, tmp_path):
    lines = _replay_lines(small_trace, tmp_path)
    together, _ = _serve(model_file, lines)
    for ue in ("u1", "u2"):
        own = [l for l in lines if xapp.parse_message(l)[1].ue_id == ue]
        alone, _ = _serve(model_file, own)
        assert [d for d in together if d["ue_id"] == ue] == alone


def test_short_stream_gives_no_decisions(model_file, tmp_path):
    lines = _replay_lines(make_trace("u", range(K - 1)), tmp_path)
    decisions, stats = _serve(model_file, lines)
    assert decisions == [] and stats.received == K - 1


def test_each_full_window_gives_one_decision(model_file, tmp_path):
    lines = _replay_lines(make_trace("u", range(10)), tmp_path)
    decisions, _ = _serve(model_file, lines)
    assert [d["timestamp"] for d in decisions] == list(range(K - 1, 10))


def test_threshold_decides(model_file, tmp_path):
    lines = _replay_lines(make_trace("u", range(10)), tmp_path)
    lo, _ = _serve(model_file, lines, threshold=0.01)
    hi, _ = _serve(model_file, lines, threshold=0.99)
    for a, b in zip(lo, hi):
        assert a["decision"] == int(a["p_ho"] >= 0.01) and b["decision"] == int(b["p_ho"] >= 0.99)


def test_out_of_order_resets_window(model_file, tmp_path):
    lines = _replay_lines(make_trace("u", range(12)), tmp_path)
    swapped = lines[:6] + [lines[7], lines[6]] + lines[8:]
    decisions, stats = _serve(model_file, swapped)
    assert stats.gaps >= 1
    # decisions resume only after K fresh consecutive indications
    ts = [d["timestamp"] for d in decisions]
    assert ts[:3] == [3, 4, 5] and min(t for t in ts if t > 5) >= 6 + K


def test_window_memory_is_bounded(model_file, tmp_path):
    svc = xapp.XAppService.from_file(model_file)
    for line in _replay_lines(make_trace("u", range(200)), tmp_path):
        svc.handle_line(line)
        assert svc.window_of("u") <= K


def test_garbage_is_counted_and_skipped(model_file, tmp_path):
    good = _replay_lines(make_trace("u", range(8)), tmp_path)
    junk = [b"\xff\xfe\x00", b"{", b"[1,2]", b"null", b'{"seq": 1}', b"\n", b"  "]
    decisions, stats = _serve(model_file, good[:4] + junk + good[4:])
    assert stats.dropped == 5
    assert len(decisions) == 8 - K + 1


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=300))
def test_arbitrary_bytes_never_crash(model_file, data):
    svc = xapp.XAppService.from_file(model_file)
    for line in data.split(b"\n"):
        svc.handle_line(line)
    assert svc.stats.decisions == 0


def test_missing_metadata_is_refused(tmp_path):
    path = tmp_path / "w.json"
    seqmodel.save_weights(path, seqmodel.init_weights(seqmodel.ModelSpec(), 0))
    with pytest.raises(seqmodel.WeightFileError):
        xapp.XAppService.from_file(path)


def test_tcp_round_trip(model_file, tmp_path):
    lines = _replay_lines(make_trace("u", range(8)), tmp_path)
    svc = xapp.XAppService.from_file(model_file)
    ready = threading.Event()
    addr = {}

    def on_ready(a):
        addr["a"] = a
        ready.set()
    th = threading.Thread(target=xapp.serve_tcp, args=(svc, "127.0.0.1", 0, on_ready, 1))
    th.start()
    assert ready.wait(10)
    conn = socket.create_connection(addr["a"], timeout=10)
    conn.sendall(b"".join(lines))
    conn.shutdown(socket.SHUT_WR)
    with conn.makefile("rb") as fh:
        replies = [json.loads(l) for l in fh]
    conn.close()
    th.join(10)
    assert [r["timestamp"] for r in replies] == list(range(K - 1, 8))


def test_tcp_sink_connect_failure_is_bounded():
    clock = FakeClock()
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]  # bound but not listening
        with pytest.raises(xapp.ReplayError, match="cannot connect"):
            xapp.tcp_sink("127.0.0.1", port, retries=2, sleep=clock.sleep)
    assert len(clock.sleeps) == 2
