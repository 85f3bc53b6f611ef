"""Windowing, labelling, splitting and class weighting of measurement traces."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .radiosim import N_NEIGHBORS, RSRP_RANGE, RSRQ_RANGE, SINR_RANGE, RSRP_STEP, RSRQ_STEP, SINR_STEP

N_FEATURES = 3 * (1 + N_NEIGHBORS)
FEATURE_ORDER = [f"{slot}_{m}" for slot in ["s"] + [f"n{j}" for j in range(1, N_NEIGHBORS + 1)]
                 for m in ("rsrp", "rsrq", "sinr")]
# per-feature (lo, hi) of the fixed reporting ranges; SINR ceiling is +40 dB
FEATURE_LO = np.array([RSRP_RANGE[0], RSRQ_RANGE[0], SINR_RANGE[0]] * (1 + N_NEIGHBORS))
FEATURE_HI = np.array([RSRP_RANGE[1], RSRQ_RANGE[1], SINR_RANGE[1]] * (1 + N_NEIGHBORS))
FEATURE_STEP = np.array([RSRP_STEP, RSRQ_STEP, SINR_STEP] * (1 + N_NEIGHBORS))
LABEL_NAMES = ("No-HO", "HO")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    history_k: int = 10
    horizon_t: int = 9

    def __post_init__(self):
        if int(self.history_k) != self.history_k or self.history_k < 1:
            raise DatasetError(f"history_k must be an integer >= 1, got {self.history_k}")
        if int(self.horizon_t) != self.horizon_t or self.horizon_t < 1:
            raise DatasetError(f"horizon_t must be an integer >= 1, got {self.horizon_t}")

    def to_dict(self) -> dict:
        return {"history_k": int(self.history_k), "horizon_t": int(self.horizon_t)}


def normalization_constants() -> dict:
    return {"feature_order": FEATURE_ORDER, "lo": FEATURE_LO.tolist(), "hi": FEATURE_HI.tolist()}


def normalize(raw: np.ndarray) -> np.ndarray:
    """Min-max scale raw metrics (last axis = 12 features) into [0, 1]."""
    raw = np.asarray(raw, dtype=np.float64)
    return (raw - FEATURE_LO) / (FEATURE_HI - FEATURE_LO)


def denormalize(x: np.ndarray, snap: bool = True) -> np.ndarray:
    """Inverse of :func:`normalize`; ``snap`` rounds back onto the reporting grid."""
    raw = np.asarray(x, dtype=np.float64) * (FEATURE_HI - FEATURE_LO) + FEATURE_LO
    if snap:
        raw = np.floor(raw / FEATURE_STEP + 0.5) * FEATURE_STEP
    return raw


@dataclass(frozen=True)
class WindowedSample:
    features: np.ndarray  # (k, 12), chronological rows
    label: int            # 1 = HO within the horizon
    origin: tuple         # (ue_id, end timestamp)


class WindowSet:
    """Array-backed sequence of :class:`WindowedSample`."""

    def __init__(self, X, y, ue_ids, end_ts, spec: Optional[WindowSpec] = None):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.ue_ids = np.asarray(ue_ids, dtype=object)
        self.end_ts = np.asarray(end_ts, dtype=np.int64)
        self.spec = spec
        n = len(self.y)
        if not (len(self.X) == len(self.ue_ids) == len(self.end_ts) == n):
            raise DatasetError("window arrays have inconsistent lengths")

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return self.subset(i)
        return WindowedSample(self.X[i], int(self.y[i]), (self.ue_ids[i], int(self.end_ts[i])))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.X[idx], self.y[idx], self.ue_ids[idx], self.end_ts[idx], self.spec)

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"], spec=None) -> "WindowSet":
        parts = list(parts)
        k = spec.history_k if spec else (parts[0].X.shape[1] if parts else 0)
        if not parts:
            return cls(np.zeros((0, k, N_FEATURES)), [], [], [], spec)
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]),
                   np.concatenate([p.ue_ids for p in parts]), np.concatenate([p.end_ts for p in parts]),
                   spec or parts[0].spec)

    def positives(self) -> int:
        return int(self.y.sum())


def group_by_ue(trace) -> dict:
    """ue_id -> samples, insertion-ordered; rejects non-increasing timestamps."""
    by_ue = {}
    for s in trace:
        rows = by_ue.setdefault(s.ue_id, [])
        if rows and s.ts <= rows[-1].ts:
            raise DatasetError(f"UE {s.ue_id}: timestamp {s.ts} does not increase "
                               f"(previous {rows[-1].ts})")
        rows.append(s)
    return by_ue


def _segments(ts: np.ndarray):
    """Split indices into runs of consecutive 1 s timestamps."""
    breaks = np.flatnonzero(np.diff(ts) != 1) + 1
    edges = np.concatenate([[0], breaks, [len(ts)]])
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def windows_for_ue(feats: np.ndarray, ho: np.ndarray, ts: np.ndarray, spec: WindowSpec):
    """Window a single contiguous-or-gapped UE stream.

    Yields ``(X, y, end_ts)`` arrays; a window ends at index e, covers rows
    e-k+1..e and is labelled HO iff a handover flag is set in rows
    e+1..e+t (strictly after the window).
    """
    k, t = spec.history_k, spec.horizon_t
    Xs, ys, ends = [], [], []
    for a, b in _segments(ts):
        n = b - a
        count = n - k - t + 1
        if count <= 0:
            continue
        f = feats[a:b]
        h = np.concatenate([[0], np.cumsum(ho[a:b].astype(np.int64))])
        end_idx = np.arange(k - 1, k - 1 + count)
        idx = end_idx[:, None] - np.arange(k - 1, -1, -1)[None, :]
        Xs.append(f[idx])
        ys.append((h[end_idx + t + 1] - h[end_idx + 1] > 0).astype(np.int64))
        ends.append(ts[a:b][end_idx])
    if not Xs:
        return np.zeros((0, k, feats.shape[1])), np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(Xs), np.concatenate(ys), np.concatenate(ends)


def build_windows(trace, spec: WindowSpec) -> WindowSet:
    """Normalized k x 12 windows with horizon labels, ordered by UE then time."""
    parts = []
    by_ue = group_by_ue(trace)
    for ue in sorted(by_ue):
        rows = by_ue[ue]
        feats = normalize(np.array([r.feature_row() for r in rows]))
        ho = np.array([r.handover for r in rows], dtype=bool)
        ts = np.array([r.ts for r in rows], dtype=np.int64)
        X, y, ends = windows_for_ue(feats, ho, ts, spec)
        parts.append(WindowSet(X, y, [ue] * len(y), ends, spec))
    return WindowSet.concat(parts, spec)


# ---------------------------------------------------------------------------
# splits and weights

def split_counts(n: int, ratios: Sequence[float]) -> list:
    """Floor each share, then hand leftovers to the largest remainders (earlier wins ties)."""
    raw = [n * r for r in ratios]
    counts = [int(math.floor(x + 1e-9)) for x in raw]
    rest = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


def class_weights_from_counts(counts: dict) -> dict:
    """w_l = n / (L * n_l) for every class label."""
    n = sum(counts.values())
    L = len(counts)
    for label, c in counts.items():
        if c <= 0:
            raise DatasetError(f"class {label!r} has no members; cannot weight it")
    return {label: n / (L * c) for label, c in counts.items()}


def class_weights(windows) -> dict:
    y = windows.y if isinstance(windows, WindowSet) else np.array([w.label for w in windows])
    return class_weights_from_counts({LABEL_NAMES[0]: int(np.sum(y == 0)),
                                      LABEL_NAMES[1]: int(np.sum(y == 1))})


def weight_vector(weights: dict) -> tuple:
    return (weights[LABEL_NAMES[0]], weights[LABEL_NAMES[1]])


@dataclass
class SplitDataset:
    train: WindowSet
    validation: WindowSet
    test: WindowSet
    class_weights: dict
    boundaries: dict  # ue_id -> [n_train, n_val, n_test] after purging
    purged: dict = field(default_factory=dict)  # ue_id -> windows dropped at split edges

    def sizes(self) -> tuple:
        return (len(self.train), len(self.validation), len(self.test))


def split(windows: WindowSet, ratios=(0.6, 0.2, 0.2)) -> SplitDataset:
    """Chronological per-UE blocks: earliest windows train, latest test.

    Block sizes follow ``split_counts``. The leading windows of the validation
    and test blocks whose inputs reach back into the previous block are then
    dropped (k-1 per edge for contiguous data), so no input sample feeds
    windows in two splits.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    k = windows.X.shape[1] if windows.X.ndim == 3 else 1
    parts = ([], [], [])
    boundaries, purged = {}, {}
    for ue in dict.fromkeys(windows.ue_ids.tolist()):
        idx = np.flatnonzero(windows.ue_ids == ue)
        idx = idx[np.argsort(windows.end_ts[idx], kind="stable")]
        counts = split_counts(len(idx), ratios)
        pos, last_end, kept, dropped = 0, None, [], 0
        for p, c in zip(parts, counts):
            block = idx[pos:pos + c]
            pos += c
            if last_end is not None and len(block):
                starts = windows.end_ts[block] - (k - 1)
                fresh = starts > last_end
                dropped += int(len(block) - fresh.sum())
                block = block[fresh]
            if len(block):
                last_end = int(windows.end_ts[block].max())
            p.append(block)
            kept.append(len(block))
        boundaries[ue] = kept
        purged[ue] = dropped
    names = ("train", "validation", "test")
    sets = []
    for name, p in zip(names, parts):
        idx = np.concatenate(p) if p else np.zeros(0, np.int64)
        if len(idx) == 0:
            raise DatasetError(f"too few windows: the {name} split would be empty")
        sets.append(windows.subset(idx))
    return SplitDataset(sets[0], sets[1], sets[2], class_weights(sets[0]), boundaries, purged)


# ---------------------------------------------------------------------------
# persistence: one .npy per array plus a JSON sidecar

def save_dataset(ds: SplitDataset, directory, spec: WindowSpec, extra: Optional[dict] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("train", "validation", "test"):
        ws = getattr(ds, name)
        np.save(d / f"{name}_X.npy", ws.X)
        np.save(d / f"{name}_y.npy", ws.y)
        np.save(d / f"{name}_end_ts.npy", ws.end_ts)
        np.save(d / f"{name}_ue.npy", ws.ue_ids.astype(str))
    side = {"window_spec": spec.to_dict(), "normalization": normalization_constants(),
            "boundaries": ds.boundaries, "purged": ds.purged, "class_weights": ds.class_weights,
            "sizes": dict(zip(("train", "validation", "test"), ds.sizes()))}
    side.update(extra or {})
    (d / "dataset.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def load_dataset(directory):
    d = Path(directory)
    try:
        side = json.loads((d / "dataset.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read dataset sidecar in {d}: {exc}") from None
    spec = WindowSpec(**side["window_spec"])
    sets = []
    for name in ("train", "validation", "test"):
        sets.append(WindowSet(np.load(d / f"{name}_X.npy"), np.load(d / f"{name}_y.npy"),
                              np.load(d / f"{name}_ue.npy").astype(object),
                              np.load(d / f"{name}_end_ts.npy"), spec))
    return (SplitDataset(*sets, side["class_weights"], side["boundaries"], side.get("purged", {})),
            spec, side)
