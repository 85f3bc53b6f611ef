"""Confusion counts, precision/recall/F1, sweeps and operating-point selection."""

from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["k", "t", "threshold", "tp", "fp", "fn", "tn", "precision", "recall", "f1"]


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn


def precision_of(c: ConfusionCounts) -> Optional[float]:
    return c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else None


def recall_of(c: ConfusionCounts) -> Optional[float]:
    return c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else None


def f1_of(c: ConfusionCounts) -> Optional[float]:
    d = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / d if d > 0 else None


@dataclass(frozen=True)
class EvalReport:
    history_k: Optional[int]
    horizon_t: Optional[int]
    threshold: float
    counts: ConfusionCounts
    precision: Optional[float]  # None when undefined (no positive predictions)
    recall: Optional[float]     # None when there are no positive labels
    f1: Optional[float]
    error: Optional[str] = None  # set when this sweep point failed

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, threshold: float,
                    history_k: Optional[int] = None, horizon_t: Optional[int] = None) -> "EvalReport":
        return cls(history_k, horizon_t, threshold, counts,
                   precision_of(counts), recall_of(counts), f1_of(counts))

    @classmethod
    def failed(cls, history_k, horizon_t, threshold, message: str) -> "EvalReport":
        return cls(history_k, horizon_t, threshold, ConfusionCounts(0, 0, 0, 0), None, None, None,
                   error=message)

    def row(self) -> dict:
        c = self.counts
        return {"k": self.history_k, "t": self.horizon_t, "threshold": self.threshold,
                "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}

    def to_dict(self) -> dict:
        d = self.row()
        if self.error:
            d["error"] = self.error
        return d


def confusion(decisions: Sequence[bool], labels: Sequence[int]) -> ConfusionCounts:
    d = np.asarray(decisions, dtype=bool)
    y = np.asarray(labels).astype(bool)
    return ConfusionCounts(tp=int(np.sum(d & y)), fp=int(np.sum(d & ~y)),
                           fn=int(np.sum(~d & y)), tn=int(np.sum(~d & ~y)))


def decide(p_ho, threshold: float) -> np.ndarray:
    return np.asarray(p_ho, dtype=np.float64) >= threshold


def _p_ho(predictions) -> np.ndarray:
    if isinstance(predictions, np.ndarray):
        return predictions[:, 1] if predictions.ndim == 2 else predictions
    return np.array([p.p_ho if hasattr(p, "p_ho") else p[1] for p in predictions], dtype=np.float64)


def metrics(predictions, labels, threshold: float = 0.5,
            history_k: Optional[int] = None, horizon_t: Optional[int] = None) -> EvalReport:
    """Score predictions (Prediction objects, (P1, P2) pairs, an (n, 2) array or
    a vector of HO probabilities) against binary labels."""
    p = _p_ho(predictions)
    y = np.asarray(labels)
    if len(p) == 0:
        raise EvalError("cannot evaluate an empty prediction set")
    if len(p) != len(y):
        raise EvalError(f"{len(p)} predictions but {len(y)} labels")
    if not 0.0 < threshold < 1.0:
        raise EvalError(f"threshold must lie in (0, 1), got {threshold}")
    return EvalReport.from_counts(confusion(decide(p, threshold), y), threshold, history_k, horizon_t)


def pr_curve(p_ho, labels, thresholds: Optional[Iterable[float]] = None,
             history_k=None, horizon_t=None) -> list:
    """One report per threshold (default 0.01..0.99)."""
    if thresholds is None:
        thresholds = np.round(np.arange(1, 100) / 100.0, 2)
    return [metrics(p_ho, labels, float(th), history_k, horizon_t) for th in thresholds]


def select_operating_point(reports: Sequence[EvalReport], min_precision: float = 0.75
                           ) -> Optional[EvalReport]:
    """Highest recall among reports whose precision clears ``min_precision``.

    Ties go to higher precision, then smaller horizon, then smaller history,
    then lower threshold. Reports with undefined precision or recall never
    qualify. Returns None (and logs why) when nothing qualifies.
    """
    ok = [r for r in reports if r.error is None and r.precision is not None
          and r.recall is not None and r.precision >= min_precision]
    if not ok:
        log.warning("no report reaches precision >= %.3f (best precision: %s)", min_precision,
                    max((r.precision for r in reports if r.precision is not None), default=None))
        return None

    def key(r):
        big = float("inf")
        return (-r.recall, -r.precision,
                r.horizon_t if r.horizon_t is not None else big,
                r.history_k if r.history_k is not None else big,
                r.threshold)
    return min(ok, key=key)


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepResult:
    parameter: str  # "horizon_t" or "history_k"
    values: list
    reports: list
    selection: Optional[EvalReport] = None
    reason: str = ""
    extra: dict = field(default_factory=dict)


def point_seed(base_seed: int, value: int) -> int:
    """Deterministic per-point seed derived from (base seed, swept value)."""
    return int(np.random.SeedSequence([int(base_seed), int(value)]).generate_state(1, np.uint64)[0]
               % (2**63))


def run_sweep(parameter: str, values: Sequence[int], evaluate_point: Callable[[int, int], EvalReport],
              base_seed: int = 0, min_precision: float = 0.75) -> SweepResult:
    """Evaluate one configuration per swept value; failures are kept per point.

    ``evaluate_point(value, seed)`` trains and scores one model.
    """
    if parameter not in ("horizon_t", "history_k"):
        raise EvalError(f"cannot sweep {parameter!r}")
    vals = sorted(set(int(v) for v in values))
    if not vals or vals[0] < 1:
        raise EvalError("swept values must be integers >= 1")
    reports = []
    for v in vals:
        seed = point_seed(base_seed, v)
        try:
            rep = evaluate_point(v, seed)
        except Exception as exc:  # one bad point must not kill the sweep
            log.error("sweep point %s=%d failed: %s", parameter, v, exc)
            k = v if parameter == "history_k" else None
            t = v if parameter == "horizon_t" else None
            rep = EvalReport.failed(k, t, float("nan"), f"{type(exc).__name__}: {exc}")
        reports.append(rep)
    if len(vals) == 1 and reports[0].error is None:
        sel, reason = reports[0], "single-point sweep"
    else:
        sel = select_operating_point(reports, min_precision)
        reason = (f"max recall with precision >= {min_precision}" if sel is not None
                  else f"no point reaches precision >= {min_precision}")
    if parameter == "horizon_t":
        rho = spearman([r.horizon_t for r in reports if r.precision is not None],
                       [r.precision for r in reports if r.precision is not None])
        log.info("precision vs horizon Spearman rho = %s (expected to increase with the horizon)", rho)
    return SweepResult(parameter, vals, reports, sel, reason)


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman rank correlation with average ranks for ties."""
    if len(x) < 2 or len(set(x)) < 2 or len(set(y)) < 2:
        return None  # undefined for constant input
    from scipy.stats import spearmanr
    rho = spearmanr(x, y).statistic
    return None if rho is None or np.isnan(rho) else float(rho)


# ---------------------------------------------------------------------------
# output

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_reports_csv(reports: Sequence[EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            row = r.row()
            w.writerow([_cell(row[c]) for c in REPORT_COLUMNS])


def read_reports_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            def num(v, cast=float):
                return cast(v) if v != "" else None
            counts = ConfusionCounts(*(int(rec[c]) for c in ("tp", "fp", "fn", "tn")))
            out.append(EvalReport(num(rec["k"], int), num(rec["t"], int), float(rec["threshold"]),
                                  counts, num(rec["precision"]), num(rec["recall"]), num(rec["f1"])))
    return out


def sweep_to_dict(sr: SweepResult) -> dict:
    return {"parameter": sr.parameter, "values": sr.values,
            "reports": [r.to_dict() for r in sr.reports],
            "selection": sr.selection.to_dict() if sr.selection else None,
            "reason": sr.reason, **sr.extra}


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")
