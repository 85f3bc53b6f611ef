"""Synthetic multi-cell measurement traces with A3-triggered handovers.

Propagation is log-distance pathloss plus per-(UE, cell) log-normal
shadowing that decorrelates with distance travelled (Gauss-Markov), so a
stationary UE sees a frozen channel. Metrics are reported the way a UE
reports them: RSRP in 1 dB steps within [-140, -44] dBm, RSRQ in 0.5 dB
steps within [-19.5, -3] dB and SINR in 0.5 dB steps within [-20, 40] dB.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

RSRP_RANGE = (-140.0, -44.0)
RSRQ_RANGE = (-19.5, -3.0)
SINR_RANGE = (-20.0, 40.0)
RSRP_STEP, RSRQ_STEP, SINR_STEP = 1.0, 0.5, 0.5
DETECTION_SINR = -20.0
N_NEIGHBORS = 3
SUBCARRIERS_PER_RB = 12
MAX_SPEED = 40.0
MIN_SPEED = 1e-6  # slower counts as stationary
# sentinel reported for a cell that cannot be detected (or an empty neighbor slot)
UNDETECTABLE = (RSRP_RANGE[0], RSRQ_RANGE[0], SINR_RANGE[0])

METRICS = ("rsrp", "rsrq", "sinr")
CSV_COLUMNS = (["ts", "ue_id", "serving_cell", "s_rsrp", "s_rsrq", "s_sinr"]
               + [f"n{j}_{m}" for j in range(1, N_NEIGHBORS + 1) for m in ("cell",) + METRICS]
               + ["ho"])


class ScenarioError(ValueError):
    pass


class TraceFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.field = field


@dataclass(frozen=True)
class CellSite:
    cell_id: str
    position: tuple
    tx_power: float = 30.0
    bandwidth_rbs: int = 50

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if not math.isfinite(self.tx_power):
            raise ScenarioError(f"cell {self.cell_id}: tx_power must be finite")
        if self.bandwidth_rbs < 1:
            raise ScenarioError(f"cell {self.cell_id}: bandwidth_rbs must be >= 1")


MOBILITY_KINDS = ("linear", "circular", "random-waypoint")


@dataclass(frozen=True)
class UeTrack:
    """Mobility of one UE.

    ``linear``: patrols back and forth along the waypoint polyline, each leg at
    the speed attached to the waypoint it starts from.
    ``circular``: waypoint 0 is the centre, waypoint 1 a point on the circle;
    the UE circles counter-clockwise at waypoint 1's speed.
    ``random-waypoint``: starts at waypoint 0, then draws destinations
    uniformly in ``area`` (defaults to the arena) at speeds uniform in
    [0.5 v, 1.5 v] around waypoint 0's speed, pausing up to ``max_pause`` s.
    ``duration`` optionally ends this UE's reporting before the scenario end.
    """
    ue_id: str
    waypoints: tuple
    mobility_kind: str = "linear"
    duration: Optional[int] = None
    area: Optional[tuple] = None
    max_pause: int = 0

    def __post_init__(self):
        wps = tuple(((float(p[0]), float(p[1])), float(s)) for p, s in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if self.area is not None:
            object.__setattr__(self, "area", tuple(float(a) for a in self.area))
        if self.mobility_kind not in MOBILITY_KINDS:
            raise ScenarioError(f"UE {self.ue_id}: unknown mobility_kind {self.mobility_kind!r}")
        if not wps:
            raise ScenarioError(f"UE {self.ue_id}: needs at least one waypoint")
        if self.mobility_kind == "circular" and len(wps) < 2:
            raise ScenarioError(f"UE {self.ue_id}: circular track needs centre and start point")
        for _, s in wps:
            if not 0.0 <= s <= MAX_SPEED:
                raise ScenarioError(f"UE {self.ue_id}: speed {s} outside [0, {MAX_SPEED}] m/s")
        if self.mobility_kind == "random-waypoint" and wps[0][1] * 1.5 > MAX_SPEED:
            raise ScenarioError(f"UE {self.ue_id}: random-waypoint speeds would exceed {MAX_SPEED} m/s")
        if self.duration is not None and self.duration < 0:
            raise ScenarioError(f"UE {self.ue_id}: negative duration")


@dataclass(frozen=True)
class RadioEnv:
    pathloss_exponent: float = 3.5
    shadowing_sigma: float = 4.0
    shadowing_corr_distance: float = 25.0
    noise_floor: float = -125.0  # dBm per 15 kHz resource element
    ho_margin: float = 3.0
    ho_time_to_trigger: int = 2
    seed: int = 0
    pl_ref_db: float = 40.0  # pathloss at the 1 m reference distance
    ref_distance: float = 1.0

    def __post_init__(self):
        if not 2.0 <= self.pathloss_exponent <= 5.0:
            raise ScenarioError("pathloss_exponent must lie in [2, 5]")
        if self.shadowing_sigma < 0:
            raise ScenarioError("shadowing_sigma must be >= 0")
        if self.shadowing_corr_distance <= 0:
            raise ScenarioError("shadowing_corr_distance must be > 0")
        if self.ho_margin < 0:
            raise ScenarioError("ho_margin must be >= 0")
        if self.ho_time_to_trigger < 0 or int(self.ho_time_to_trigger) != self.ho_time_to_trigger:
            raise ScenarioError("ho_time_to_trigger must be a non-negative whole number of seconds")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Neighbor:
    cell: str  # "" for an empty slot
    rsrp: float
    rsrq: float
    sinr: float


@dataclass(frozen=True)
class MeasurementSample:
    ts: int
    ue_id: str
    serving_cell: str
    rsrp: float
    rsrq: float
    sinr: float
    neighbors: tuple  # exactly N_NEIGHBORS Neighbor entries, strongest first
    handover: bool

    def cell_metrics(self) -> dict:
        """cell_id -> (rsrp, rsrq, sinr) for every reported cell."""
        out = {self.serving_cell: (self.rsrp, self.rsrq, self.sinr)}
        for nb in self.neighbors:
            if nb.cell:
                out[nb.cell] = (nb.rsrp, nb.rsrq, nb.sinr)
        return out

    def feature_row(self) -> list:
        row = [self.rsrp, self.rsrq, self.sinr]
        for nb in self.neighbors:
            row += [nb.rsrp, nb.rsrq, nb.sinr]
        return row


@dataclass
class TraceRun:
    """Samples plus the unquantized physics behind them (for audits)."""
    samples: list
    # per UE: arrays (n_ticks, n_cells) of rsrp dBm and rssi dBm before reporting
    rsrp_raw: dict = field(default_factory=dict)
    rssi: dict = field(default_factory=dict)
    sinr_raw: dict = field(default_factory=dict)
    # per UE: reported RSRP of every cell (n_ticks, n_cells) and serving index
    rsrp_reported: dict = field(default_factory=dict)
    serving_index: dict = field(default_factory=dict)
    positions: dict = field(default_factory=dict)
    cell_ids: tuple = ()


# ---------------------------------------------------------------------------
# quantization helpers

def _quantize(x, step, lo, hi):
    q = np.floor(np.asarray(x, dtype=np.float64) / step + 0.5) * step
    return np.clip(q, lo, hi)


def quantize_rsrp(x):
    return _quantize(x, RSRP_STEP, *RSRP_RANGE)


def quantize_rsrq(x):
    return _quantize(x, RSRQ_STEP, *RSRQ_RANGE)


def quantize_sinr(x):
    return _quantize(x, SINR_STEP, *SINR_RANGE)


def dbm_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=np.float64) / 10.0)


def mw_to_dbm(x):
    return 10.0 * np.log10(x)


def compute_rsrq(rsrp, rssi, n_rbs):
    """Reported RSRQ from RSRP and RSSI given in dBm.

    The ratio N * RSRP / RSSI is taken in linear power, converted to dB and
    then quantized/clamped to the RSRQ reporting grid. Works element-wise.
    """
    rsrp = np.asarray(rsrp, dtype=np.float64)
    rssi = np.asarray(rssi, dtype=np.float64)
    n = np.asarray(n_rbs)
    if np.any(n < 1):
        raise ValueError("n_rbs must be >= 1")
    if not (np.all(np.isfinite(rsrp)) and np.all(np.isfinite(rssi))):
        raise ValueError("rsrp and rssi must be finite")
    ratio_db = 10.0 * np.log10(n * dbm_to_mw(rsrp) / dbm_to_mw(rssi))
    out = quantize_rsrq(ratio_db)
    return float(out) if out.ndim == 0 else out


def pathloss_db(distance, env: RadioEnv):
    d = np.maximum(np.asarray(distance, dtype=np.float64), env.ref_distance)
    return env.pl_ref_db + 10.0 * env.pathloss_exponent * np.log10(d / env.ref_distance)


# ---------------------------------------------------------------------------
# mobility

def _polyline_positions(wps, n):
    pts = [np.array(p) for p, _ in wps]
    if len(pts) == 1 or all(s <= MIN_SPEED for _, s in wps[:-1]):
        return np.tile(pts[0], (n, 1))
    # patrol: forward along the legs, then back
    legs = [(pts[i], pts[i + 1], wps[i][1]) for i in range(len(pts) - 1)]
    legs += [(pts[i + 1], pts[i], wps[i][1]) for i in reversed(range(len(pts) - 1))]
    legs = [(a, b, s) for a, b, s in legs if s > MIN_SPEED and np.linalg.norm(b - a) > 0]
    if not legs:
        return np.tile(pts[0], (n, 1))
    out = np.empty((n, 2))
    leg, pos, carry = 0, legs[0][0].copy(), 0.0
    out[0] = pos
    for t in range(1, n):
        remaining = 1.0  # seconds of motion in this tick
        while remaining > 1e-12:
            a, b, s = legs[leg]
            left = np.linalg.norm(b - pos)
            need = left / s
            if need <= remaining:
                pos = b.copy()
                remaining -= need
                leg = (leg + 1) % len(legs)
            else:
                pos = pos + (b - pos) / left * s * remaining
                remaining = 0.0
        out[t] = pos
    return out


def _circular_positions(wps, n):
    (cx, cy), _ = wps[0]
    (sx, sy), speed = wps[1]
    r = math.hypot(sx - cx, sy - cy)
    theta0 = math.atan2(sy - cy, sx - cx)
    omega = speed / r if r > 0 and speed > MIN_SPEED else 0.0
    th = theta0 + omega * np.arange(n)
    return np.column_stack([cx + r * np.cos(th), cy + r * np.sin(th)])


def _random_waypoint_positions(track: UeTrack, n, area, rng):
    (x0, y0), v = track.waypoints[0]
    xmin, ymin, xmax, ymax = track.area or area
    out = np.empty((n, 2))
    pos = np.array([x0, y0])
    out[0] = pos
    dest, speed, pause = None, 0.0, 0
    for t in range(1, n):
        remaining = 1.0
        while remaining > 1e-12:
            if pause > 0:
                pause -= 1
                remaining = 0.0
                break
            if dest is None:
                dest = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
                speed = rng.uniform(0.5 * v, 1.5 * v)
            if speed <= MIN_SPEED:
                break
            left = np.linalg.norm(dest - pos)
            need = left / speed
            if need <= remaining:
                pos = dest
                remaining -= need
                dest = None
                if track.max_pause > 0:
                    pause = int(rng.integers(0, track.max_pause + 1))
            else:
                pos = pos + (dest - pos) / left * speed * remaining
                remaining = 0.0
        out[t] = pos
    return out


def track_positions(track: UeTrack, n_ticks: int, area, rng=None) -> np.ndarray:
    if track.mobility_kind == "linear":
        return _polyline_positions(track.waypoints, n_ticks)
    if track.mobility_kind == "circular":
        return _circular_positions(track.waypoints, n_ticks)
    if rng is None:
        raise ScenarioError("random-waypoint mobility needs a random generator")
    return _random_waypoint_positions(track, n_ticks, area, rng)


# ---------------------------------------------------------------------------
# generation

def default_arena(cells: Sequence[CellSite], pad: float = 1000.0) -> tuple:
    xs = [c.position[0] for c in cells]
    ys = [c.position[1] for c in cells]
    return (min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad)


def _shadowing(positions, n_cells, env: RadioEnv, rng):
    n = len(positions)
    out = np.zeros((n, n_cells))
    if env.shadowing_sigma == 0 or n == 0:
        return out
    step = np.zeros(n)
    step[1:] = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    rho = np.exp(-step / env.shadowing_corr_distance)
    innov = rng.standard_normal((n, n_cells)) * env.shadowing_sigma
    out[0] = innov[0]
    for t in range(1, n):
        out[t] = rho[t] * out[t - 1] + math.sqrt(max(0.0, 1.0 - rho[t] ** 2)) * innov[t]
    return out


def _measure(positions, cells, env, shadow):
    """Unquantized per-cell RSRP, RSSI and SINR, all (n_ticks, n_cells)."""
    cpos = np.array([c.position for c in cells])
    d = np.linalg.norm(positions[:, None, :] - cpos[None, :, :], axis=2)
    n_rbs = np.array([c.bandwidth_rbs for c in cells], dtype=np.float64)
    per_re_tx = np.array([c.tx_power for c in cells]) - 10.0 * np.log10(SUBCARRIERS_PER_RB * n_rbs)
    rsrp = per_re_tx[None, :] - pathloss_db(d, env) - shadow
    p = dbm_to_mw(rsrp)
    noise = dbm_to_mw(env.noise_floor)
    total = p.sum(axis=1, keepdims=True) + noise
    # RSSI: all co-channel carriers plus noise over the N RBs of each cell
    rssi = mw_to_dbm(SUBCARRIERS_PER_RB * n_rbs[None, :] * total)
    sinr = mw_to_dbm(p / (total - p))
    return rsrp, rssi, sinr


def _report(rsrp_raw, rssi, sinr_raw, cells):
    """Quantize and apply the detection floor; returns three (n, C) arrays."""
    n_rbs = np.array([c.bandwidth_rbs for c in cells])
    rsrp = quantize_rsrp(rsrp_raw)
    rsrq = compute_rsrq(rsrp_raw, rssi, n_rbs[None, :])
    sinr = quantize_sinr(sinr_raw)
    hidden = sinr_raw < DETECTION_SINR
    rsrp = np.where(hidden, UNDETECTABLE[0], rsrp)
    rsrq = np.where(hidden, UNDETECTABLE[1], rsrq)
    sinr = np.where(hidden, UNDETECTABLE[2], sinr)
    return rsrp, np.asarray(rsrq, dtype=np.float64), sinr


def a3_serving_sequence(rsrp: np.ndarray, margin: float, ttt: int, initial: Optional[int] = None):
    """Serving cell per tick under the A3 rule.

    A handover to neighbor j executes at tick t when j's reported RSRP has
    exceeded the serving cell's by more than ``margin`` at every tick from
    t - ttt through t. Returns ``(serving, handover)`` arrays.
    """
    n, C = rsrp.shape
    serving = np.empty(n, dtype=np.int64)
    handover = np.zeros(n, dtype=bool)
    if n == 0:
        return serving, handover
    s = int(np.argmax(rsrp[0])) if initial is None else initial
    streak = np.zeros(C, dtype=np.int64)
    for t in range(n):
        cond = rsrp[t] > rsrp[t, s] + margin
        cond[s] = False
        streak = np.where(cond, streak + 1, 0)
        ready = np.flatnonzero(streak >= ttt + 1)
        if t > 0 and len(ready):
            # strongest qualifying neighbor, lowest index on ties
            target = int(ready[np.argmax(rsrp[t, ready])])
            s = target
            handover[t] = True
            streak[:] = 0
        serving[t] = s
    return serving, handover


def _check_scenario(cells, ues, duration, arena):
    if not cells:
        raise ScenarioError("scenario needs at least one cell")
    ids = [c.cell_id for c in cells]
    if len(set(ids)) != len(ids):
        raise ScenarioError("cell_id values must be unique")
    if any(not cid or "," in cid for cid in ids):
        raise ScenarioError("cell ids must be non-empty and comma-free")
    uids = [u.ue_id for u in ues]
    if len(set(uids)) != len(uids):
        raise ScenarioError("ue_id values must be unique")
    if duration < 1 or int(duration) != duration:
        raise ScenarioError("duration must be a whole number of seconds >= 1")
    xmin, ymin, xmax, ymax = arena
    if not (xmin < xmax and ymin < ymax):
        raise ScenarioError(f"degenerate arena {arena}")


def simulate(cells: Sequence[CellSite], ues: Sequence[UeTrack], env: RadioEnv,
             duration: int, arena: Optional[tuple] = None) -> TraceRun:
    """Generate a trace and keep the internal physics alongside it."""
    cells = list(cells)
    arena = tuple(arena) if arena is not None else (default_arena(cells) if cells else None)
    _check_scenario(cells, ues, duration, arena or (0, 0, 1, 1))
    ss = np.random.SeedSequence(env.seed)
    ue_seeds = ss.spawn(len(ues))
    run = TraceRun(samples=[], cell_ids=tuple(c.cell_id for c in cells))
    xmin, ymin, xmax, ymax = arena
    ids = [c.cell_id for c in cells]
    for track, ue_ss in zip(ues, ue_seeds):
        n = int(duration if track.duration is None else min(duration, track.duration))
        mob_ss, shadow_ss = ue_ss.spawn(2)
        pos = track_positions(track, n, arena, np.random.default_rng(mob_ss))
        if n and (pos[:, 0].min() < xmin or pos[:, 0].max() > xmax
                  or pos[:, 1].min() < ymin or pos[:, 1].max() > ymax):
            bad = int(np.flatnonzero((pos[:, 0] < xmin) | (pos[:, 0] > xmax)
                                     | (pos[:, 1] < ymin) | (pos[:, 1] > ymax))[0])
            raise ScenarioError(f"UE {track.ue_id} leaves the arena {arena} at t={bad}s "
                                f"(position {tuple(np.round(pos[bad], 2))})")
        shadow = _shadowing(pos, len(cells), env, np.random.default_rng(shadow_ss))
        rsrp_raw, rssi, sinr_raw = _measure(pos, cells, env, shadow)
        rsrp, rsrq, sinr = _report(rsrp_raw, rssi, sinr_raw, cells)
        serving, ho = a3_serving_sequence(rsrp, env.ho_margin, int(env.ho_time_to_trigger))
        run.rsrp_raw[track.ue_id] = rsrp_raw
        run.rssi[track.ue_id] = rssi
        run.sinr_raw[track.ue_id] = sinr_raw
        run.rsrp_reported[track.ue_id] = rsrp
        run.serving_index[track.ue_id] = serving
        run.positions[track.ue_id] = pos
        for t in range(n):
            s = int(serving[t])
            others = [j for j in range(len(cells)) if j != s]
            # strongest reported first; stable sort keeps cell order on ties
            others.sort(key=lambda j: -rsrp[t, j])
            nbs = [Neighbor(ids[j], float(rsrp[t, j]), float(rsrq[t, j]), float(sinr[t, j]))
                   for j in others[:N_NEIGHBORS]]
            nbs += [Neighbor("", *UNDETECTABLE)] * (N_NEIGHBORS - len(nbs))
            run.samples.append(MeasurementSample(
                ts=t, ue_id=track.ue_id, serving_cell=ids[s],
                rsrp=float(rsrp[t, s]), rsrq=float(rsrq[t, s]), sinr=float(sinr[t, s]),
                neighbors=tuple(nbs), handover=bool(ho[t])))
    return run


def generate_trace(cells, ues, env: RadioEnv, duration: int, arena=None) -> list:
    """One MeasurementSample per UE per second, grouped by UE then time."""
    return simulate(cells, ues, env, duration, arena).samples


def handover_fraction(samples) -> float:
    return sum(s.handover for s in samples) / len(samples) if samples else 0.0


def verify_a3_causality(samples, margin: float, ttt: int, strict: bool = True) -> list:
    """Replay the A3 rule on a reported trace; returns offending (ue_id, ts).

    A handover tick whose source or target cell is missing from a row in the
    look-back span cannot be replayed from the trace alone (only the three
    strongest neighbors are reported); ``strict`` counts those as failures.
    """
    bad = []
    by_ue = {}
    for s in samples:
        by_ue.setdefault(s.ue_id, []).append(s)
    for ue, rows in by_ue.items():
        for i, s in enumerate(rows):
            if not s.handover:
                continue
            if i - ttt < 0 or rows[i - 1].serving_cell == s.serving_cell:
                bad.append((ue, s.ts))
                continue
            source, target = rows[i - 1].serving_cell, s.serving_cell
            for r in rows[i - ttt:i + 1]:
                m = r.cell_metrics()
                if source not in m or target not in m:
                    if strict:
                        bad.append((ue, s.ts))
                    break
                if not m[target][0] > m[source][0] + margin:
                    bad.append((ue, s.ts))
                    break
    return bad


def verify_a3_matrix(rsrp: np.ndarray, serving: np.ndarray, handover: np.ndarray,
                     margin: float, ttt: int) -> list:
    """Same replay against the full per-cell reported RSRP matrix; returns bad ticks."""
    bad = []
    for t in np.flatnonzero(handover):
        src, dst = serving[t - 1] if t > 0 else -1, serving[t]
        if t - ttt < 0 or src == dst or src < 0:
            bad.append(int(t))
            continue
        span = slice(t - ttt, t + 1)
        if not np.all(rsrp[span, dst] > rsrp[span, src] + margin):
            bad.append(int(t))
    # no switch of serving cell without a flagged handover
    switches = np.flatnonzero(serving[1:] != serving[:-1]) + 1
    bad += [int(t) for t in switches if not handover[t]]
    return sorted(set(bad))


# ---------------------------------------------------------------------------
# CSV trace format

def _fmt(x: float) -> str:
    return repr(float(x))


def _sample_to_row(s: MeasurementSample) -> list:
    row = [str(s.ts), s.ue_id, s.serving_cell, _fmt(s.rsrp), _fmt(s.rsrq), _fmt(s.sinr)]
    for nb in s.neighbors:
        row += [nb.cell, _fmt(nb.rsrp), _fmt(nb.rsrq), _fmt(nb.sinr)]
    row.append("1" if s.handover else "0")
    return row


def write_trace(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in samples:
            w.writerow(_sample_to_row(s))


def trace_to_csv_text(samples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in samples:
        w.writerow(_sample_to_row(s))
    return buf.getvalue()


_RANGES = {"rsrp": RSRP_RANGE, "rsrq": RSRQ_RANGE, "sinr": SINR_RANGE}


def _metric(value: str, name: str, line: int) -> float:
    try:
        x = float(value)
    except ValueError:
        raise TraceFormatError(f"{name}={value!r} is not a number", line, name) from None
    lo, hi = _RANGES[name.rsplit("_", 1)[1]]
    if not (lo <= x <= hi):
        raise TraceFormatError(f"{name}={x} outside [{lo}, {hi}]", line, name)
    return x


def parse_row(fields: Sequence[str], line: int) -> MeasurementSample:
    if len(fields) != len(CSV_COLUMNS):
        raise TraceFormatError(f"expected {len(CSV_COLUMNS)} fields, got {len(fields)}", line)
    rec = dict(zip(CSV_COLUMNS, fields))
    try:
        ts = int(rec["ts"])
    except ValueError:
        raise TraceFormatError(f"ts={rec['ts']!r} is not an integer", line, "ts") from None
    if not rec["ue_id"] or not rec["serving_cell"]:
        raise TraceFormatError("ue_id and serving_cell must be non-empty", line)
    nbs = []
    for j in range(1, N_NEIGHBORS + 1):
        nbs.append(Neighbor(rec[f"n{j}_cell"], *(_metric(rec[f"n{j}_{m}"], f"n{j}_{m}", line)
                                                 for m in METRICS)))
    if rec["ho"] not in ("0", "1"):
        raise TraceFormatError(f"ho={rec['ho']!r} must be 0 or 1", line, "ho")
    return MeasurementSample(ts, rec["ue_id"], rec["serving_cell"],
                             _metric(rec["s_rsrp"], "s_rsrp", line),
                             _metric(rec["s_rsrq"], "s_rsrq", line),
                             _metric(rec["s_sinr"], "s_sinr", line),
                             tuple(nbs), rec["ho"] == "1")


def iter_trace(path):
    """Yield samples one by one; errors carry the 1-based file line number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        if header != CSV_COLUMNS:
            raise TraceFormatError("header does not match the trace schema", 1)
        for fields in reader:
            if not fields:
                continue
            yield parse_row(fields, reader.line_num)


def read_trace(path) -> list:
    return list(iter_trace(path))


# ---------------------------------------------------------------------------
# scenario config (JSON)

@dataclass
class Scenario:
    cells: list
    ues: list
    env: RadioEnv
    duration: int
    arena: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "cells": [asdict(c) for c in self.cells],
            "ues": [asdict(u) for u in self.ues],
            "env": asdict(self.env),
            "duration": self.duration,
            "arena": list(self.arena) if self.arena else None,
            "seed": self.env.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            env = dict(d.get("env", {}))
            if "seed" in d:
                env["seed"] = int(d["seed"])
            return cls(cells=[CellSite(**c) for c in d["cells"]],
                       ues=[UeTrack(**u) for u in d["ues"]],
                       env=RadioEnv(**env),
                       duration=int(d["duration"]),
                       arena=tuple(d["arena"]) if d.get("arena") else None)
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"invalid scenario config: {exc}") from None

    def run(self) -> TraceRun:
        return simulate(self.cells, self.ues, self.env, self.duration, self.arena)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()
