"""Command line entry point: ``hopredict <command> ...``.

Every command takes ``--config FILE`` (JSON, see ``ExperimentConfig``) plus
flag overrides, writes its outputs and a ``manifest-<command>.json`` (seed,
config, input and output hashes) into ``--out``. A relative ``--out`` is
resolved under ``$HOPREDICT_OUTPUT_ROOT`` when that variable is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import costmodel, dataset, evalkit, pipeline, radiosim, seqmodel, xapp
from .dataset import WindowSpec

log = logging.getLogger("hopredict")

REPRODUCE_TARGETS = ("horizon-sweep", "history-sweep", "pr-curve", "confusion", "cost-surfaces")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def parse_int_list(text: str) -> list:
    """``"1..15"``, ``"1,3,9"`` or a mix such as ``"1..3,9"``."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                a, b = part.split("..")
                out += list(range(int(a), int(b) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def parse_fix(text: str) -> tuple:
    name, _, value = text.partition("=")
    if name not in ("history", "horizon") or not value:
        raise argparse.ArgumentTypeError("--fix expects history=K or horizon=T")
    try:
        return name, int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--fix value must be an integer: {value!r}") from None


def parse_addr(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}") from None


def output_dir(args, command: str) -> Path:
    root = os.environ.get(pipeline.OUTPUT_ROOT_ENV)
    out = Path(args.out) if args.out else Path(command)
    if not out.is_absolute():
        out = Path(root) / out if root else (out if args.out else Path("runs") / command)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_cfg(args, **overrides) -> pipeline.ExperimentConfig:
    overrides.setdefault("seed", getattr(args, "seed", None))
    return pipeline.load_config(getattr(args, "config", None), overrides)


def config_inputs(args) -> list:
    return [args.config] if getattr(args, "config", None) else []


def load_samples(path):
    if not Path(path).exists():
        raise CliError(f"trace file not found: {path}")
    samples = radiosim.read_trace(path)
    if not samples:
        raise CliError(f"trace file {path} holds no samples")
    return samples


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _num(v):
    return "" if v is None else repr(float(v))


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    cfg = load_cfg(args, total_samples=args.samples)
    out = output_dir(args, "simulate")
    scenario = cfg.build_scenario()
    samples = scenario.run().samples
    trace = out / "trace.csv"
    radiosim.write_trace(samples, trace)
    write_json(out / "scenario.json", scenario.to_dict())
    frac = radiosim.handover_fraction(samples)
    ws = dataset.build_windows(samples, cfg.window_spec())
    win_rate = ws.positives() / len(ws) if len(ws) else None
    pipeline.write_manifest(out, "simulate", cfg.seed, config_inputs(args),
                            [trace, out / "scenario.json"], cfg.to_dict(),
                            {"scenario_digest": scenario.digest(), "samples": len(samples),
                             "handover_fraction": frac, "window_positive_fraction": win_rate})
    print(f"{len(samples)} samples, handover fraction {frac:.4f} per sample, "
          f"{'n/a' if win_rate is None else f'{win_rate:.4f}'} per window "
          f"(k={cfg.history_k}, t={cfg.horizon_t}) -> {trace}")
    return 0


def _window_from(cfg, args) -> WindowSpec:
    return WindowSpec(args.history if args.history is not None else cfg.history_k,
                      args.horizon if args.horizon is not None else cfg.horizon_t)


def cmd_train(args) -> int:
    cfg = load_cfg(args)
    if args.epochs is not None:
        cfg.train = {**cfg.train, "epochs": args.epochs}
    spec = _window_from(cfg, args)
    out = output_dir(args, "train")
    samples = load_samples(args.trace)
    ds = pipeline.prepare(samples, spec, cfg.ratios)
    tc = pipeline.train_config(cfg, cfg.seed, ds.class_weights)
    log.info("training k=%d t=%d on %d windows (validation %d)", spec.history_k, spec.horizon_t,
             len(ds.train), len(ds.validation))
    res = pipeline.fit(ds, tc)
    meta = pipeline.weight_metadata(res.weights, spec, ds.class_weights, cfg.seed, tc)
    meta["trace_sha256"] = pipeline.file_sha256(args.trace)
    meta["best_epoch"] = res.best_epoch
    weights = out / "weights.json"
    seqmodel.save_weights(weights, res.weights, meta)
    logfile = out / "train_log.csv"
    with open(logfile, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_precision", "val_recall", "val_f1"])
        for e in res.log:
            w.writerow([e.epoch, _num(e.train_loss), _num(e.val_loss), _num(e.val_precision),
                        _num(e.val_recall), _num(e.val_f1)])
    side = out / "dataset.json"
    write_json(side, {"window_spec": spec.to_dict(), "boundaries": ds.boundaries, "purged": ds.purged,
                      "class_weights": ds.class_weights,
                      "sizes": dict(zip(("train", "validation", "test"), ds.sizes())),
                      "positives": {"train": ds.train.positives(), "validation": ds.validation.positives(),
                                    "test": ds.test.positives()},
                      "normalization": dataset.normalization_constants()})
    pipeline.write_manifest(out, "train", cfg.seed, [args.trace] + config_inputs(args),
                            [weights, logfile, side], cfg.to_dict(),
                            {"model_version": meta["model_version"], "best_epoch": res.best_epoch})
    print(f"best epoch {res.best_epoch}, model {meta['model_version']} -> {weights}")
    return 0


def _load_guarded(weights_path, args):
    expect = {}
    if getattr(args, "history", None) is not None:
        expect["history_k"] = args.history
    if getattr(args, "horizon", None) is not None:
        expect["horizon_t"] = args.horizon
    if not Path(weights_path).exists():
        raise CliError(f"weight file not found: {weights_path}")
    weights, meta = seqmodel.load_weights(weights_path, expect_window=expect or None)
    if "window_spec" not in meta:
        raise CliError(f"weight file {weights_path} carries no window_spec")
    return weights, meta


def cmd_evaluate(args) -> int:
    cfg = load_cfg(args, threshold=args.threshold)
    weights, meta = _load_guarded(args.weights, args)
    spec = WindowSpec(**meta["window_spec"])
    out = output_dir(args, "evaluate")
    samples = load_samples(args.trace)
    if meta.get("trace_sha256") not in (None, pipeline.file_sha256(args.trace)):
        log.warning("weights were trained on a different trace")
    ds = pipeline.prepare(samples, spec, cfg.ratios)
    ev = pipeline.evaluate(weights, ds, spec, cfg)
    reports = out / "reports.csv"
    rows = [ev.report] + ([ev.test_at_validation_point] if ev.test_at_validation_point else [])
    evalkit.write_reports_csv(rows, reports)
    curve = out / "pr_curve.csv"
    evalkit.write_reports_csv(ev.pr_curve, curve)
    preds = out / "predictions.csv"
    with open(preds, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ue_id", "end_ts", "p_ho", "decision", "label"])
        for ue, ts, p, y in zip(ds.test.ue_ids, ds.test.end_ts, ev.p_ho, ds.test.y):
            w.writerow([ue, int(ts), repr(float(p)), int(p >= cfg.threshold), int(y)])
    summary = out / "evaluation.json"
    doc = ev.to_dict()
    doc.update({"model_version": meta.get("model_version"), "window_spec": spec.to_dict(),
                "test_positives": int(ds.test.y.sum()), "test_negatives": int((ds.test.y == 0).sum())})
    write_json(summary, doc)
    pipeline.write_manifest(out, "evaluate", cfg.seed, [args.trace, args.weights] + config_inputs(args),
                            [reports, curve, preds, summary], cfg.to_dict())
    r = ev.report
    print(f"test k={spec.history_k} t={spec.horizon_t} threshold={cfg.threshold}: "
          f"P={r.precision} R={r.recall} F1={r.f1}")
    for name, c in ev.costs.items():
        print(f"  cost {name} (c_p={c['c_p']}, c_n={c['c_n']}): reduction vs long-term purchase "
              f"{c['reduction']}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_cfg(args)
    fixed, value = args.fix
    if fixed == "history":
        cfg.history_k = value
        parameter, values = "horizon_t", args.horizons or cfg.horizons
    else:
        cfg.horizon_t = value
        parameter, values = "history_k", args.histories or cfg.histories
    if args.epochs is not None:
        cfg.sweep_train = {**cfg.sweep_train, "epochs": args.epochs}
    out = output_dir(args, "sweep")
    samples = load_samples(args.trace)
    sr = pipeline.sweep(samples, cfg, parameter, values,
                        on_point=lambda r: log.info("point k=%s t=%s P=%s R=%s", r.history_k,
                                                    r.horizon_t, r.precision, r.recall))
    stem = "sweep_horizon" if parameter == "horizon_t" else "sweep_history"
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    evalkit.write_reports_csv(sr.reports, csv_path)
    ok = [r for r in sr.reports if r.precision is not None]
    xs = [r.horizon_t if parameter == "horizon_t" else r.history_k for r in ok]
    sr.extra["spearman_precision"] = evalkit.spearman(xs, [r.precision for r in ok])
    evalkit.write_json(evalkit.sweep_to_dict(sr), json_path)
    pipeline.write_manifest(out, "sweep", cfg.seed, [args.trace] + config_inputs(args),
                            [csv_path, json_path], cfg.to_dict())
    sel = sr.selection
    print(f"{len(sr.reports)} points; selection: "
          f"{'none' if sel is None else f'k={sel.history_k} t={sel.horizon_t}'} ({sr.reason})")
    return 0


def _read_pr_points(path) -> list:
    return [(r.precision, r.recall) for r in evalkit.read_reports_csv(path)
            if r.precision is not None and r.recall is not None]


def cmd_cost(args) -> int:
    cfg = load_cfg(args)
    out = output_dir(args, "cost")
    params = costmodel.CostParams(args.cp, args.cn)
    inputs = config_inputs(args)
    tag = f"cp{args.cp:g}_cn{args.cn:g}"
    if args.surface:
        Np, Nn, points = args.np, args.nn, []
        if args.evaluation:
            ev_doc = json.loads(Path(args.evaluation).read_text())
            Np, Nn = ev_doc["test_positives"], ev_doc["test_negatives"]
            inputs.append(args.evaluation)
            curve = Path(args.evaluation).with_name("pr_curve.csv")
            if curve.exists():
                points = _read_pr_points(curve)
                inputs.append(curve)
        if Np is None or Nn is None:
            raise CliError("--surface needs --np and --nn, or --evaluation")
        surf = costmodel.cost_surface(params, Np, Nn, args.resolution, points)
        outputs = costmodel.write_surface(surf, out / f"cost_surface_{tag}")
        print(f"surface c_p={args.cp} c_n={args.cn} over {args.resolution}x{args.resolution} grid "
              f"-> {outputs[0]}")
    else:
        if not args.predictions:
            raise CliError("give --surface or --predictions")
        with open(args.predictions, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise CliError(f"{args.predictions} holds no predictions")
        p = np.array([int(r["decision"]) for r in rows])
        r_ = np.array([int(r["label"]) for r in rows])
        led = costmodel.evaluate_cost(p, r_, params)
        doc = {"c_p": args.cp, "c_n": args.cn, **led.to_dict(),
               "reduction": costmodel.reduction_vs_traditional(led)}
        outputs = [out / f"cost_{tag}.json"]
        write_json(outputs[0], doc)
        inputs.append(args.predictions)
        print(f"total {led.total} vs long-term purchase {led.C_trad}: reduction {doc['reduction']}")
    pipeline.write_manifest(out, "cost", cfg.seed, inputs, outputs, {"c_p": args.cp, "c_n": args.cn})
    return 0


def cmd_serve(args) -> int:
    weights, meta = _load_guarded(args.weights, args)
    svc = xapp.XAppService(weights, meta, args.threshold)
    log.info("serving model %s (k=%d, t=%d) at threshold %s", svc.model_version, svc.k, svc.t,
             args.threshold)
    if args.listen:
        host, port = args.listen
        xapp.serve_tcp(svc, host, port, ready=lambda a: log.info("listening on %s:%d", *a))
    else:
        out = sys.stdout

        def emit(rec):
            out.write(rec.to_json() + "\n")
            out.flush()
        svc.run(sys.stdin.buffer, emit)
    s = svc.stats
    print(f"received {s.received}, dropped {s.dropped}, gaps {s.gaps}, decisions {s.decisions}",
          file=sys.stderr)
    return 0


def cmd_replay(args) -> int:
    if args.connect:
        sink, close = xapp.tcp_sink(*args.connect)
    else:
        sink, close = xapp.stream_sink(sys.stdout.buffer), (lambda: None)
    try:
        n = xapp.replay(args.trace, args.rate, sink)
    finally:
        close()
    log.info("replayed %d indications", n)
    return 0


def cmd_reproduce(args) -> int:
    from . import reproduce
    cfg = load_cfg(args)
    out = output_dir(args, "reproduce")
    targets = REPRODUCE_TARGETS if args.target == "all" else (args.target,)
    for target in targets:
        paths = reproduce.run(target, cfg, out)
        print(f"{target}: " + ", ".join(str(p) for p in paths))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hopredict", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory")
        if seed:
            p.add_argument("--seed", type=int, help="global seed")

    p = sub.add_parser("simulate", help="generate a measurement trace")
    common(p)
    p.add_argument("--samples", type=int, help="total samples of the built-in scenario")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the LSTM on a trace")
    common(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--history", type=int, help="history k (steps)")
    p.add_argument("--horizon", type=int, help="horizon t (steps)")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on the held-out test split")
    common(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--history", type=int, help="refuse weights trained with another k")
    p.add_argument("--horizon", type=int, help="refuse weights trained with another t")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="retrain across horizons or histories")
    common(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--fix", type=parse_fix, required=True, help="history=K or horizon=T")
    p.add_argument("--horizons", type=parse_int_list, help="e.g. 1..15")
    p.add_argument("--histories", type=parse_int_list, help="e.g. 1..20")
    p.add_argument("--epochs", type=int, help="epochs per sweep point")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cost", help="cost surfaces or the cost of a decision series")
    common(p)
    p.add_argument("--cp", type=float, required=True)
    p.add_argument("--cn", type=float, required=True)
    p.add_argument("--surface", action="store_true")
    p.add_argument("--np", type=int, help="positives for the surface")
    p.add_argument("--nn", type=int, help="negatives for the surface")
    p.add_argument("--evaluation", help="evaluation.json; supplies Np/Nn and the model's PR curve")
    p.add_argument("--predictions", help="predictions.csv from evaluate")
    p.add_argument("--resolution", type=int, default=101)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("serve", help="streaming inference over NDJSON indications")
    p.add_argument("--weights", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--history", type=int, help="refuse weights trained with another k")
    p.add_argument("--horizon", type=int, help="refuse weights trained with another t")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--stdin", action="store_true")
    src.add_argument("--listen", type=parse_addr, metavar="HOST:PORT")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="send a trace as NDJSON indications")
    p.add_argument("--trace", required=True)
    p.add_argument("--rate", type=float, default=0.0, help="real-time multiplier; 0 = unpaced")
    dst = p.add_mutually_exclusive_group()
    dst.add_argument("--stdout", action="store_true", help="default")
    dst.add_argument("--connect", type=parse_addr, metavar="HOST:PORT")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("reproduce", help="run a whole experiment chain from the seed")
    common(p)
    p.add_argument("target", choices=REPRODUCE_TARGETS + ("all",))
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"hopredict {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
