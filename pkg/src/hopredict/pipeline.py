"""Experiment plumbing shared by the CLI, the reproduction scripts and the tests.

A run is simulate -> window/split -> train -> evaluate -> cost. Every stage
is a pure function of its inputs and the global seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import costmodel, dataset, evalkit, radiosim, seqmodel
from .dataset import SplitDataset, WindowSpec
from .radiosim import Scenario
from .scenarios import DEFAULT_SEED, default_scenario
from .seqmodel import ModelSpec, TrainConfig

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "HOPREDICT_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = DEFAULT_SEED
    scenario: Optional[dict] = None  # Scenario.to_dict() form; None = built-in default
    total_samples: int = 40_000      # size of the built-in default scenario
    history_k: int = 10
    horizon_t: int = 9
    ratios: tuple = (0.6, 0.2, 0.2)
    train: dict = field(default_factory=lambda: {"epochs": 30})
    sweep_train: dict = field(default_factory=dict)  # overrides of ``train`` for sweep points
    horizons: list = field(default_factory=lambda: list(range(1, 16)))
    histories: list = field(default_factory=lambda: list(range(1, 21)))
    threshold: float = 0.5
    min_precision: float = 0.75
    cost_configs: dict = field(default_factory=lambda: {
        name: {"c_p": float(p.c_p), "c_n": float(p.c_n)} for name, p in costmodel.SLA_CONFIGS.items()})
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def validate(self) -> None:
        try:
            self.window_spec()
            TrainConfig(**self.train)
            TrainConfig(**{**self.train, **self.sweep_train})
            if self.scenario is not None:
                Scenario.from_dict(self.scenario)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        if self.total_samples < 3:
            raise ConfigError("total_samples must be >= 3")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        for name, c in self.cost_configs.items():
            costmodel.CostParams(c["c_p"], c["c_n"])

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.history_k, self.horizon_t)

    def build_scenario(self) -> Scenario:
        if self.scenario is None:
            return default_scenario(self.seed, self.total_samples)
        d = dict(self.scenario)
        d["seed"] = self.seed
        return Scenario.from_dict(d)


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a JSON config (or start from defaults) and apply flag overrides."""
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            d[k] = v
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# stages

def prepare(samples, spec: WindowSpec, ratios=(0.6, 0.2, 0.2)) -> SplitDataset:
    return dataset.split(dataset.build_windows(samples, spec), ratios)


def train_config(cfg: ExperimentConfig, seed: int, class_weights: dict, sweep: bool = False) -> TrainConfig:
    opts = dict(cfg.train)
    if sweep:
        opts.update(cfg.sweep_train)
    opts["seed"] = int(seed)
    opts["class_weights"] = dataset.weight_vector(class_weights)
    opts.setdefault("threshold", cfg.threshold)
    return TrainConfig(**opts)


def fit(ds: SplitDataset, tc: TrainConfig, spec: ModelSpec = ModelSpec()) -> seqmodel.TrainResult:
    return seqmodel.train_arrays(ds.train.X, ds.train.y, ds.validation.X, ds.validation.y, spec, tc)


def model_version(weights: seqmodel.ModelWeights) -> str:
    """Short content hash of the parameters."""
    h = hashlib.sha256()
    for name, a in weights.named_arrays():
        h.update(name.encode())
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def weight_metadata(weights, spec: WindowSpec, class_weights: dict, seed: int, tc: TrainConfig) -> dict:
    return {"window_spec": spec.to_dict(),
            "normalization": dataset.normalization_constants(),
            "class_weights": class_weights,
            "seed": int(seed),
            "train_config": {"epochs": tc.epochs, "batch_size": tc.batch_size,
                             "learning_rate": tc.learning_rate, "optimizer": tc.optimizer,
                             "early_stop_patience": tc.early_stop_patience},
            "model_version": model_version(weights)}


def score(weights, windows) -> np.ndarray:
    """HO probability per window on the eval path shared with the streaming service."""
    if len(windows) == 0:
        return np.zeros(0)
    return seqmodel.predict_proba(weights, windows.X)[:, 1]


@dataclass
class Evaluation:
    report: evalkit.EvalReport           # test split at the fixed threshold
    p_ho: np.ndarray                     # test probabilities
    labels: np.ndarray
    validation_point: Optional[evalkit.EvalReport]  # threshold chosen on validation
    test_at_validation_point: Optional[evalkit.EvalReport]
    pr_curve: list                       # test split, thresholds 0.01..0.99
    costs: dict                          # config name -> {"ledger", "reduction"}

    def to_dict(self) -> dict:
        return {"test": self.report.to_dict(),
                "validation_selected": (self.validation_point.to_dict()
                                        if self.validation_point else None),
                "test_at_validation_threshold": (self.test_at_validation_point.to_dict()
                                                 if self.test_at_validation_point else None),
                "costs": self.costs}


def cost_summary(decisions, labels, cost_configs: dict) -> dict:
    out = {}
    for name, c in sorted(cost_configs.items()):
        led = costmodel.evaluate_cost(np.asarray(decisions, dtype=np.int64),
                                      np.asarray(labels, dtype=np.int64),
                                      costmodel.CostParams(c["c_p"], c["c_n"]))
        out[name] = {"c_p": c["c_p"], "c_n": c["c_n"], **led.to_dict(),
                     "reduction": costmodel.reduction_vs_traditional(led)}
    return out


def evaluate(weights, ds: SplitDataset, spec: WindowSpec, cfg: ExperimentConfig) -> Evaluation:
    if len(ds.test) == 0:
        raise dataset.DatasetError("the test split is empty")
    k, t = spec.history_k, spec.horizon_t
    p_test = score(weights, ds.test)
    rep = evalkit.metrics(p_test, ds.test.y, cfg.threshold, k, t)
    p_val = score(weights, ds.validation)
    val_point = evalkit.select_operating_point(
        evalkit.pr_curve(p_val, ds.validation.y, history_k=k, horizon_t=t), cfg.min_precision)
    test_at_val = (evalkit.metrics(p_test, ds.test.y, val_point.threshold, k, t)
                   if val_point is not None else None)
    curve = evalkit.pr_curve(p_test, ds.test.y, history_k=k, horizon_t=t)
    costs = cost_summary(evalkit.decide(p_test, cfg.threshold), ds.test.y, cfg.cost_configs)
    return Evaluation(rep, p_test, ds.test.y, val_point, test_at_val, curve, costs)


def sweep(samples, cfg: ExperimentConfig, parameter: str, values: Sequence[int],
          on_point=None) -> evalkit.SweepResult:
    """Retrain and score one model per swept value on identically generated data."""
    def point(value, seed):
        k = value if parameter == "history_k" else cfg.history_k
        t = value if parameter == "horizon_t" else cfg.horizon_t
        spec = WindowSpec(k, t)
        ds = prepare(samples, spec, cfg.ratios)
        tc = train_config(cfg, seed, ds.class_weights, sweep=True)
        res = fit(ds, tc)
        rep = evalkit.metrics(score(res.weights, ds.test), ds.test.y, cfg.threshold, k, t)
        if on_point is not None:
            on_point(rep)
        return rep
    return evalkit.run_sweep(parameter, values, point, cfg.seed, cfg.min_precision)


# ---------------------------------------------------------------------------
# manifests

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, seed: int, inputs: Sequence, outputs: Sequence,
                   config: Optional[dict] = None, extra: Optional[dict] = None) -> Path:
    """``manifest-<command>.json`` with input/output hashes; paths are stored by name."""
    out_dir = Path(out_dir)
    doc = {"command": command, "seed": int(seed),
           "inputs": {Path(p).name: file_sha256(p) for p in inputs},
           "outputs": {Path(p).name: file_sha256(p) for p in outputs}}
    if config is not None:
        doc["config"] = config
    doc.update(extra or {})
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path
