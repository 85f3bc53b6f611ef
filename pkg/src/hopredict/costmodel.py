"""Resource-acquisition cost of purchase decisions versus actual requirements.

Per timestep the operator either buys resources in the target area
(``p = 1``) or not, and the resources either turn out to be needed
(``r = 1``) or not. Buying unneeded resources costs ``c_p``; lacking needed
ones costs ``c_n``. The long-term purchase baseline buys at every step.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

Number = Union[float, int]


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class CostParams:
    c_p: Union[Number, Sequence[Number]] = 1.0
    c_n: Union[Number, Sequence[Number]] = 1.0

    def __post_init__(self):
        for name in ("c_p", "c_n"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
                raise CostError(f"{name} values must lie in [0, 1]")

    @property
    def constant(self) -> bool:
        return np.ndim(self.c_p) == 0 and np.ndim(self.c_n) == 0

    def series(self, n: int):
        out = []
        for name in ("c_p", "c_n"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim == 0:
                v = np.full(n, float(v))
            elif len(v) != n:
                raise CostError(f"{name} series has {len(v)} entries, decisions have {n}")
            out.append(v)
        return out


# The three SLA configurations: balanced, availability-first, cost-first.
SLA_CONFIGS = {"balanced": CostParams(1.0, 1.0),
                "availability": CostParams(0.0, 1.0),
                "frugal": CostParams(1.0, 0.0)}


@dataclass(frozen=True)
class CostLedger:
    C_p: float
    C_n: float
    total: float
    C_trad: float
    normalized_total: Optional[float]  # total / worst case; None if worst case is 0
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return {"C_p": self.C_p, "C_n": self.C_n, "total": self.total, "C_trad": self.C_trad,
                "normalized_total": self.normalized_total, "fp": self.fp, "fn": self.fn}


def _binary(x, name):
    a = np.asarray(x)
    if a.ndim != 1:
        raise CostError(f"{name} must be a 1-D series")
    if a.size and not np.all((a == 0) | (a == 1)):
        raise CostError(f"{name} must be binary")
    return a.astype(np.int64)


def evaluate_cost(p, r, params: CostParams = CostParams()) -> CostLedger:
    """Sum c_p*p*(1-r) and c_n*r*(1-p) over the series, plus the buy-always baseline."""
    p = _binary(p, "p")
    r = _binary(r, "r")
    if len(p) != len(r):
        raise CostError(f"decision series has {len(p)} steps, requirement series {len(r)}")
    cp, cn = params.series(len(p))
    fp_mask = p * (1 - r)
    fn_mask = r * (1 - p)
    C_p = float(np.sum(cp * fp_mask))
    C_n = float(np.sum(cn * fn_mask))
    C_trad = float(np.sum(cp * (1 - r)))
    worst = float(np.sum(cp * (1 - r)) + np.sum(cn * r))
    total = C_p + C_n
    return CostLedger(C_p, C_n, total, C_trad, total / worst if worst > 0 else None,
                      int(fp_mask.sum()), int(fn_mask.sum()))


def reduction_vs_traditional(ledger: CostLedger) -> Optional[float]:
    """1 - total / C_trad, or None when the baseline costs nothing."""
    if ledger.C_trad <= 0:
        return None
    return 1.0 - ledger.total / ledger.C_trad


def compare_to_traditional(p, r, params: CostParams = CostParams()) -> Optional[float]:
    return reduction_vs_traditional(evaluate_cost(p, r, params))


def cost_from_metrics(precision: float, recall: float, positives: Number, negatives: Number,
                      params: CostParams = CostParams()) -> Optional[float]:
    """Normalized cost implied by a (precision, recall) pair.

    FN = (1 - R) Np, TP = R Np, FP = TP (1 - P) / P capped at Nn, and FP = Nn
    at P = 0. The result is divided by the all-wrong cost c_p Nn + c_n Np, so
    (P, R) = (1, 1) maps to 0 and (0, 0) maps to 1.
    """
    if not params.constant:
        raise CostError("cost_from_metrics needs constant cost parameters")
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise CostError("precision and recall must lie in [0, 1]")
    if positives < 0 or negatives < 0:
        raise CostError("positive/negative counts must be >= 0")
    c_p, c_n = float(params.c_p), float(params.c_n)
    denom = c_p * negatives + c_n * positives
    if denom <= 0:
        return None
    fn = (1.0 - recall) * positives
    if precision > 0:
        fp = min(recall * positives * (1.0 - precision) / precision, float(negatives))
    else:
        fp = float(negatives)
    return (c_p * fp + c_n * fn) / denom


@dataclass
class CostSurface:
    params: CostParams
    positives: float
    negatives: float
    precision: np.ndarray  # (res,)
    recall: np.ndarray     # (res,)
    cost: np.ndarray       # (res_precision, res_recall); NaN where undefined
    overlay: list          # [(precision, recall, cost)]

    def metadata(self) -> dict:
        return {"c_p": float(self.params.c_p), "c_n": float(self.params.c_n),
                "Np": self.positives, "Nn": self.negatives, "resolution": len(self.precision)}


def cost_surface(params: CostParams, positives: Number, negatives: Number, resolution: int = 101,
                 model_points: Sequence[tuple] = ()) -> CostSurface:
    """Normalized cost over a uniform precision x recall grid, plus model overlay points."""
    if resolution < 2:
        raise CostError("resolution must be >= 2")
    grid = np.linspace(0.0, 1.0, resolution)
    cost = np.full((resolution, resolution), np.nan)
    for i, P in enumerate(grid):
        for j, R in enumerate(grid):
            v = cost_from_metrics(float(P), float(R), positives, negatives, params)
            if v is not None:
                cost[i, j] = v
    overlay = []
    for P, R in model_points:
        overlay.append((float(P), float(R), cost_from_metrics(float(P), float(R), positives,
                                                              negatives, params)))
    return CostSurface(params, float(positives), float(negatives), grid, grid.copy(), cost, overlay)


def write_surface(surface: CostSurface, stem) -> list:
    """Write ``<stem>.csv`` (precision, recall, cost), ``<stem>.json`` and
    ``<stem>_overlay.csv``; returns the written paths."""
    stem = Path(stem)
    paths = [stem.with_suffix(".csv"), stem.with_suffix(".json"),
             stem.with_name(stem.name + "_overlay.csv")]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["precision", "recall", "cost"])
        for i, P in enumerate(surface.precision):
            for j, R in enumerate(surface.recall):
                c = surface.cost[i, j]
                w.writerow([repr(float(P)), repr(float(R)), "" if math.isnan(c) else repr(float(c))])
    paths[1].write_text(json.dumps(surface.metadata(), indent=1, sort_keys=True) + "\n")
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["precision", "recall", "cost"])
        for P, R, c in surface.overlay:
            w.writerow([repr(P), repr(R), "" if c is None else repr(c)])
    return paths
