"""End-to-end experiment chains, each regenerated from the config seed.

Targets:
    horizon-sweep   precision/recall for t in ``cfg.horizons`` at k = ``cfg.history_k``
    history-sweep   precision/recall for k in ``cfg.histories`` at t = ``cfg.horizon_t``
    pr-curve        test precision/recall over thresholds for the main model
    confusion       test confusion matrix of the main model at ``cfg.threshold``
    cost-surfaces   normalized cost over (precision, recall) per cost config, with
                    the main model's curve overlaid

The main model (k = ``cfg.history_k``, t = ``cfg.horizon_t``) is trained once per
output directory and reused by later targets when its trace hash still matches.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from . import costmodel, evalkit, pipeline, radiosim, seqmodel
from .dataset import LABEL_NAMES

log = logging.getLogger(__name__)


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def simulate_trace(cfg: pipeline.ExperimentConfig, out: Path):
    path = out / "trace.csv"
    samples = cfg.build_scenario().run().samples
    radiosim.write_trace(samples, path)
    return samples, path


def main_model(cfg: pipeline.ExperimentConfig, out: Path, samples, trace_path: Path):
    """Train (or reuse) the main model; returns ``(weights, meta, dataset)``."""
    spec = cfg.window_spec()
    ds = pipeline.prepare(samples, spec, cfg.ratios)
    weights_path = out / "weights.json"
    trace_hash = pipeline.file_sha256(trace_path)
    if weights_path.exists():
        weights, meta = seqmodel.load_weights(weights_path)
        if (meta.get("trace_sha256") == trace_hash and meta.get("window_spec") == spec.to_dict()
                and meta.get("seed") == cfg.seed):
            log.info("reusing %s", weights_path)
            return weights, meta, ds
    tc = pipeline.train_config(cfg, cfg.seed, ds.class_weights)
    log.info("training main model k=%d t=%d", spec.history_k, spec.horizon_t)
    res = pipeline.fit(ds, tc)
    meta = pipeline.weight_metadata(res.weights, spec, ds.class_weights, cfg.seed, tc)
    meta.update(trace_sha256=trace_hash, best_epoch=res.best_epoch)
    seqmodel.save_weights(weights_path, res.weights, meta)
    return res.weights, meta, ds


def _sweep(cfg, out, samples, parameter):
    values = cfg.horizons if parameter == "horizon_t" else cfg.histories
    sr = pipeline.sweep(samples, cfg, parameter, values,
                        on_point=lambda r: log.info("k=%s t=%s P=%s R=%s", r.history_k,
                                                    r.horizon_t, r.precision, r.recall))
    ok = [r for r in sr.reports if r.precision is not None]
    xs = [r.horizon_t if parameter == "horizon_t" else r.history_k for r in ok]
    sr.extra["spearman_precision"] = evalkit.spearman(xs, [r.precision for r in ok])
    sr.extra["spearman_recall"] = evalkit.spearman(xs, [r.recall for r in ok])
    stem = "sweep_horizon" if parameter == "horizon_t" else "sweep_history"
    paths = [out / f"{stem}.csv", out / f"{stem}.json"]
    evalkit.write_reports_csv(sr.reports, paths[0])
    evalkit.write_json(evalkit.sweep_to_dict(sr), paths[1])
    return paths


def run(target: str, cfg: pipeline.ExperimentConfig, out) -> list:
    """Run one target into ``out``; returns the written paths (manifest last)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    samples, trace_path = simulate_trace(cfg, out)
    if target == "horizon-sweep":
        paths = _sweep(cfg, out, samples, "horizon_t")
    elif target == "history-sweep":
        paths = _sweep(cfg, out, samples, "history_k")
    elif target in ("pr-curve", "confusion", "cost-surfaces"):
        weights, meta, ds = main_model(cfg, out, samples, trace_path)
        ev = pipeline.evaluate(weights, ds, cfg.window_spec(), cfg)
        if target == "pr-curve":
            paths = [out / "pr_curve.csv", out / "pr_curve.json"]
            evalkit.write_reports_csv(ev.pr_curve, paths[0])
            _write_json(paths[1], {"model_version": meta["model_version"], **ev.to_dict()})
        elif target == "confusion":
            r, c = ev.report, ev.report.counts
            ho, no = LABEL_NAMES[1], LABEL_NAMES[0]
            rows = {ho: {"predicted_" + ho: c.tp, "predicted_" + no: c.fn},
                    no: {"predicted_" + ho: c.fp, "predicted_" + no: c.tn}}
            paths = [_write_json(out / "confusion.json", {
                "threshold": cfg.threshold, "actual": rows, "precision": r.precision,
                "recall": r.recall, "f1": r.f1, "model_version": meta["model_version"]})]
        else:
            points = [(r.precision, r.recall) for r in ev.pr_curve
                      if r.precision is not None and r.recall is not None]
            Np, Nn = int(ev.labels.sum()), int((ev.labels == 0).sum())
            paths = []
            for name, c in sorted(cfg.cost_configs.items()):
                surf = costmodel.cost_surface(costmodel.CostParams(c["c_p"], c["c_n"]), Np, Nn,
                                              model_points=points)
                paths += costmodel.write_surface(surf, out / f"cost_surface_{name}")
            paths.append(_write_json(out / "costs.json", ev.costs))
        paths.insert(0, out / "weights.json")
    else:
        raise ValueError(f"unknown reproduction target {target!r}")
    paths.insert(0, trace_path)
    paths.append(pipeline.write_manifest(out, f"reproduce-{target}", cfg.seed, [], paths,
                                         cfg.to_dict()))
    return paths
