"""Streaming inference in the shape of a near-RT RIC xApp.

Indications travel as newline-delimited JSON, one object per measurement:

    seq           int, strictly increasing per UE
    ts            int, seconds
    ue_id         non-empty string
    serving_cell  non-empty string
    s_rsrp, s_rsrq, s_sinr                  serving cell metrics
    n{j}_cell, n{j}_rsrp, n{j}_rsrq, n{j}_sinr   for j = 1..3, strongest first;
                                            n{j}_cell is "" for an empty slot
    ho            0/1 (or false/true); informational, never used for inference

Metric ranges match the trace CSV. Streams from several UEs may be
interleaved on one connection; each UE keys its own window.

Decisions go out as NDJSON with ``timestamp, ue_id, p_ho, decision,
horizon_t, model_version``. ``p_ho`` is written with full float precision so
a reader recovers the exact double.
"""

from __future__ import annotations

import json
import logging
import math
import socket
import socketserver
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import radiosim, seqmodel
from .radiosim import CSV_COLUMNS, METRICS, N_NEIGHBORS, MeasurementSample, Neighbor

log = logging.getLogger(__name__)

MESSAGE_FIELDS = ["seq"] + CSV_COLUMNS
_RANGES = {"rsrp": radiosim.RSRP_RANGE, "rsrq": radiosim.RSRQ_RANGE, "sinr": radiosim.SINR_RANGE}


class SchemaError(ValueError):
    pass


class ReplayError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# messages

def sample_to_message(sample: MeasurementSample, seq: int) -> dict:
    msg = {"seq": int(seq), "ts": int(sample.ts), "ue_id": sample.ue_id,
           "serving_cell": sample.serving_cell,
           "s_rsrp": sample.rsrp, "s_rsrq": sample.rsrq, "s_sinr": sample.sinr}
    for j, nb in enumerate(sample.neighbors, start=1):
        msg.update({f"n{j}_cell": nb.cell, f"n{j}_rsrp": nb.rsrp,
                    f"n{j}_rsrq": nb.rsrq, f"n{j}_sinr": nb.sinr})
    msg["ho"] = int(sample.handover)
    return msg


def encode_message(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode()


def _int_field(msg, name):
    v = msg.get(name)
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{name} must be an integer")
    return v


def _str_field(msg, name, allow_empty=False):
    v = msg.get(name)
    if not isinstance(v, str) or (not v and not allow_empty):
        raise SchemaError(f"{name} must be a {'' if allow_empty else 'non-empty '}string")
    return v


def _metric_field(msg, name):
    v = msg.get(name)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{name} must be a number")
    v = float(v)
    lo, hi = _RANGES[name.rsplit("_", 1)[1]]
    if not (math.isfinite(v) and lo <= v <= hi):
        raise SchemaError(f"{name}={v} outside [{lo}, {hi}]")
    return v


def parse_message(line) -> tuple:
    """Decode one NDJSON line into ``(seq, MeasurementSample)``; raises SchemaError."""
    try:
        text = line.decode("utf-8") if isinstance(line, (bytes, bytearray)) else line
        msg = json.loads(text)
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise SchemaError(f"not a JSON object: {type(exc).__name__}") from None
    if not isinstance(msg, dict):
        raise SchemaError("not a JSON object")
    missing = [f for f in MESSAGE_FIELDS if f not in msg]
    if missing:
        raise SchemaError(f"missing fields {missing}")
    seq = _int_field(msg, "seq")
    if seq < 0:
        raise SchemaError("seq must be >= 0")
    ts = _int_field(msg, "ts")
    nbs = tuple(Neighbor(_str_field(msg, f"n{j}_cell", allow_empty=True),
                         *(_metric_field(msg, f"n{j}_{m}") for m in METRICS))
                for j in range(1, N_NEIGHBORS + 1))
    ho = msg["ho"]
    if ho not in (0, 1) or isinstance(ho, float):
        raise SchemaError("ho must be 0/1 or a boolean")
    sample = MeasurementSample(ts, _str_field(msg, "ue_id"), _str_field(msg, "serving_cell"),
                               _metric_field(msg, "s_rsrp"), _metric_field(msg, "s_rsrq"),
                               _metric_field(msg, "s_sinr"), nbs, bool(ho))
    return seq, sample


# ---------------------------------------------------------------------------
# replay

def _trace_order(samples):
    # timestamp order across UEs; UEs keep their first-seen order within a tick
    first = {}
    for s in samples:
        first.setdefault(s.ue_id, len(first))
    return sorted(samples, key=lambda s: (s.ts, first[s.ue_id]))


def _deliver(sink: Callable[[bytes], None], data: bytes, retries: int, backoff: float, sleep) -> None:
    delay = backoff
    for attempt in range(retries + 1):
        try:
            sink(data)
            return
        except OSError as exc:
            if attempt == retries:
                raise ReplayError(f"sink unavailable after {retries + 1} attempts: {exc}") from None
            log.warning("sink write failed (%s); retrying in %.3fs", exc, delay)
            sleep(delay)
            delay = min(delay * 2, 5.0)


def replay(trace_path, rate: float, sink: Callable[[bytes], None], retries: int = 5,
           backoff: float = 0.05, clock=time.monotonic, sleep=time.sleep) -> int:
    """Send a trace file as indications; returns the number of messages sent.

    ``rate`` is a real-time multiplier: one trace second takes 1/rate wall
    seconds. ``rate=0`` sends as fast as possible. A malformed row aborts
    before anything is sent, naming its line.
    """
    if rate < 0:
        raise ValueError("rate must be >= 0")
    samples = _trace_order(radiosim.read_trace(trace_path))
    seqs = {}
    start_wall = clock()
    start_ts = samples[0].ts if samples else 0
    for s in samples:
        if rate > 0:
            due = start_wall + (s.ts - start_ts) / rate
            wait = due - clock()
            if wait > 0:
                sleep(wait)
        seq = seqs.get(s.ue_id, -1) + 1
        seqs[s.ue_id] = seq
        _deliver(sink, encode_message(sample_to_message(s, seq)), retries, backoff, sleep)
    return len(samples)


def stream_sink(fh) -> Callable[[bytes], None]:
    def write(data: bytes):
        fh.write(data)
        fh.flush()
    return write


def tcp_sink(host: str, port: int, retries: int = 5, backoff: float = 0.1, sleep=time.sleep):
    """Connect with bounded backoff; returns ``(sink, close)``."""
    delay = backoff
    for attempt in range(retries + 1):
        try:
            conn = socket.create_connection((host, port), timeout=10)
            break
        except OSError as exc:
            if attempt == retries:
                raise ReplayError(f"cannot connect to {host}:{port}: {exc}") from None
            sleep(delay)
            delay = min(delay * 2, 5.0)
    return conn.sendall, conn.close


# ---------------------------------------------------------------------------
# inference service

@dataclass(frozen=True)
class DecisionRecord:
    timestamp: int
    ue_id: str
    p_ho: float
    decision: int
    horizon_t: int
    model_version: str

    def to_json(self) -> str:
        return json.dumps({"timestamp": self.timestamp, "ue_id": self.ue_id, "p_ho": self.p_ho,
                           "decision": self.decision, "horizon_t": self.horizon_t,
                           "model_version": self.model_version}, separators=(",", ":"))


@dataclass
class ServiceStats:
    received: int = 0
    dropped: int = 0       # schema violations
    gaps: int = 0          # out-of-order or missing indications (window reset)
    decisions: int = 0


@dataclass
class _UeState:
    window: deque
    last_seq: int
    last_ts: int


class XAppService:
    """Per-UE sliding windows over indications, one decision per full window.

    A window is reset whenever a UE's sequence number fails to increase by
    exactly one or its timestamp fails to advance by exactly one second, so
    no window spans a gap (the offline windowing splits on the same gaps).
    """

    def __init__(self, weights: seqmodel.ModelWeights, meta: dict, threshold: float = 0.5):
        if not 0 < threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        try:
            ws = meta["window_spec"]
            self.k = int(ws["history_k"])
            self.t = int(ws["horizon_t"])
            norm = meta["normalization"]
            self.lo = np.asarray(norm["lo"], dtype=np.float64)
            self.hi = np.asarray(norm["hi"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise seqmodel.WeightFileError(f"weight file lacks window/normalization metadata: {exc}") from None
        if self.lo.shape != (weights.spec.input_size,) or self.hi.shape != self.lo.shape:
            raise seqmodel.WeightFileError("normalization constants do not match the model input size")
        self.weights = weights
        self.threshold = float(threshold)
        self.model_version = str(meta.get("model_version", "unversioned"))
        self.stats = ServiceStats()
        self._ues = {}

    @classmethod
    def from_file(cls, path, threshold: float = 0.5) -> "XAppService":
        weights, meta = seqmodel.load_weights(path)
        return cls(weights, meta, threshold)

    def _normalize(self, sample: MeasurementSample) -> np.ndarray:
        return (np.asarray(sample.feature_row(), dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def window_of(self, ue_id: str) -> int:
        st = self._ues.get(ue_id)
        return len(st.window) if st else 0

    def handle(self, seq: int, sample: MeasurementSample) -> Optional[DecisionRecord]:
        st = self._ues.get(sample.ue_id)
        if st is None:
            st = _UeState(deque(maxlen=self.k), seq, sample.ts)
            self._ues[sample.ue_id] = st
        elif seq != st.last_seq + 1 or sample.ts != st.last_ts + 1:
            kind = "out-of-order" if seq <= st.last_seq or sample.ts <= st.last_ts else "gap"
            log.warning("UE %s: %s indication (seq %d after %d, ts %d after %d); window reset",
                        sample.ue_id, kind, seq, st.last_seq, sample.ts, st.last_ts)
            self.stats.gaps += 1
            st.window.clear()
        st.last_seq, st.last_ts = seq, sample.ts
        st.window.append(self._normalize(sample))
        if len(st.window) < self.k:
            return None
        X = np.stack(st.window)[None]
        p_ho = float(seqmodel.predict_proba(self.weights, X)[0, 1])
        self.stats.decisions += 1
        return DecisionRecord(sample.ts, sample.ue_id, p_ho, int(p_ho >= self.threshold), self.t,
                              self.model_version)

    def handle_line(self, line) -> Optional[DecisionRecord]:
        """Never raises on bad input: schema violations are counted and dropped."""
        if isinstance(line, (bytes, bytearray)) and not line.strip():
            return None
        if isinstance(line, str) and not line.strip():
            return None
        self.stats.received += 1
        try:
            seq, sample = parse_message(line)
        except SchemaError as exc:
            self.stats.dropped += 1
            log.debug("dropped indication: %s", exc)
            return None
        return self.handle(seq, sample)

    def run(self, lines: Iterable, emit: Callable[[DecisionRecord], None]) -> ServiceStats:
        for line in lines:
            rec = self.handle_line(line)
            if rec is not None:
                emit(rec)
        return self.stats


def serve(weights_path, threshold: float, input_stream: Iterable, emit: Callable[[DecisionRecord], None]
          ) -> ServiceStats:
    return XAppService.from_file(weights_path, threshold).run(input_stream, emit)


def serve_tcp(service: XAppService, host: str, port: int, ready: Optional[Callable] = None,
              max_connections: Optional[int] = None) -> ServiceStats:
    """Accept connections one at a time; decisions are written back on the same socket."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            peer_open = True
            for line in self.rfile:
                rec = service.handle_line(line)
                if rec is not None and peer_open:
                    try:
                        self.wfile.write((rec.to_json() + "\n").encode())
                    except OSError as exc:
                        # keep consuming; the peer just stops getting answers
                        log.warning("client %s stopped reading decisions: %s", self.client_address, exc)
                        peer_open = False

    socketserver.TCPServer.allow_reuse_address = True
    with socketserver.TCPServer((host, port), Handler) as srv:
        if ready is not None:
            ready(srv.server_address)
        if max_connections is None:
            srv.serve_forever()
        else:
            for _ in range(max_connections):
                srv.handle_request()
    return service.stats
