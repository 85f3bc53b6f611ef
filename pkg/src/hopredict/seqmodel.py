"""Stacked LSTM sequence-to-vector classifier written directly in numpy.

Everything runs in float64. Gate order inside every kernel is
input | forget | cell candidate | output. Class index 0 is No-HO and
class index 1 is HO, so ``probs[:, 1]`` is the handover probability.
"""

from __future__ import annotations

import base64
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
PROB_FLOOR = 1e-12
NO_HO, HO = 0, 1


class ModelError(ValueError):
    pass


class WeightFileError(ModelError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class LayerSpec:
    units: int
    dropout: float = 0.10
    recurrent_dropout: float = 0.50

    def __post_init__(self):
        if self.units < 1:
            raise ModelError(f"layer size must be >= 1, got {self.units}")
        for name in ("dropout", "recurrent_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ModelError(f"{name} must be in [0, 1), got {v}")


# 32/64/32 cells, 10% dropout and 50% recurrent dropout on every hidden layer.
DEFAULT_LAYERS = (LayerSpec(32), LayerSpec(64), LayerSpec(32))


@dataclass(frozen=True)
class ModelSpec:
    input_size: int = 12
    layers: tuple = DEFAULT_LAYERS
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(
            l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers))
        if self.input_size < 1:
            raise ModelError("input_size must be >= 1")
        if self.n_classes != 2:
            raise ModelError("output layer must have exactly 2 classes")

    def to_dict(self) -> dict:
        return {"input_size": self.input_size,
                "layers": [asdict(l) for l in self.layers],
                "n_classes": self.n_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(input_size=int(d["input_size"]),
                   layers=tuple(LayerSpec(**l) for l in d["layers"]),
                   n_classes=int(d.get("n_classes", 2)))

    def without_dropout(self) -> "ModelSpec":
        return ModelSpec(self.input_size,
                         tuple(LayerSpec(l.units, 0.0, 0.0) for l in self.layers),
                         self.n_classes)


@dataclass
class LSTMParams:
    W: np.ndarray  # (in, 4H) input kernel
    U: np.ndarray  # (H, 4H) recurrent kernel
    b: np.ndarray  # (4H,)

    @property
    def units(self) -> int:
        return self.U.shape[0]


@dataclass
class ModelWeights:
    spec: ModelSpec
    lstm: list
    V: np.ndarray  # (H_top, 2) output kernel
    c: np.ndarray  # (2,)

    def named_arrays(self) -> list:
        """Parameters in their declared (serialization) order."""
        out = []
        for i, p in enumerate(self.lstm):
            out += [(f"lstm{i}.W", p.W), (f"lstm{i}.U", p.U), (f"lstm{i}.b", p.b)]
        out += [("dense.V", self.V), ("dense.c", self.c)]
        return out

    def n_params(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.spec,
                            [LSTMParams(p.W.copy(), p.U.copy(), p.b.copy()) for p in self.lstm],
                            self.V.copy(), self.c.copy())

    def zeros_like(self) -> "ModelWeights":
        return ModelWeights(self.spec,
                            [LSTMParams(np.zeros_like(p.W), np.zeros_like(p.U), np.zeros_like(p.b))
                             for p in self.lstm],
                            np.zeros_like(self.V), np.zeros_like(self.c))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for _, a in self.named_arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size

    def equals(self, other: "ModelWeights") -> bool:
        if self.spec != other.spec:
            return False
        mine, theirs = self.named_arrays(), other.named_arrays()
        return len(mine) == len(theirs) and all(
            n1 == n2 and a.shape == b.shape and np.array_equal(a, b)
            for (n1, a), (n2, b) in zip(mine, theirs))

    def check_shapes(self) -> None:
        spec = self.spec
        if len(self.lstm) != len(spec.layers):
            raise ModelError(f"{len(self.lstm)} LSTM layers, spec declares {len(spec.layers)}")
        n_in = spec.input_size
        for i, (p, ls) in enumerate(zip(self.lstm, spec.layers)):
            H = ls.units
            for name, arr, shape in (("W", p.W, (n_in, 4 * H)), ("U", p.U, (H, 4 * H)),
                                     ("b", p.b, (4 * H,))):
                if arr.shape != shape:
                    raise ModelError(f"lstm{i}.{name} has shape {arr.shape}, expected {shape}")
            n_in = H
        if self.V.shape != (n_in, 2) or self.c.shape != (2,):
            raise ModelError(f"dense layer shapes {self.V.shape}/{self.c.shape} do not match "
                             f"({n_in}, 2)/(2,)")
        for name, a in self.named_arrays():
            if not np.all(np.isfinite(a)):
                raise ModelError(f"{name} contains non-finite values")


def init_weights(spec: ModelSpec, seed: int) -> ModelWeights:
    """Fan-in scaled uniform kernels, zero biases except forget gate = 1."""
    rng = np.random.default_rng(seed)
    layers = []
    n_in = spec.input_size
    for ls in spec.layers:
        H = ls.units
        W = rng.uniform(-1, 1, (n_in, 4 * H)) * math.sqrt(3.0 / n_in)
        U = rng.uniform(-1, 1, (H, 4 * H)) * math.sqrt(3.0 / H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        layers.append(LSTMParams(W, U, b))
        n_in = H
    V = rng.uniform(-1, 1, (n_in, 2)) * math.sqrt(3.0 / n_in)
    return ModelWeights(spec, layers, V, np.zeros(2))


def zero_weights(spec: ModelSpec) -> ModelWeights:
    w = init_weights(spec, 0)
    w.set_flat(np.zeros(w.n_params()))
    return w


# ---------------------------------------------------------------------------
# forward / backward

def _sigmoid(x):
    # tanh form never overflows
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {where}")


@dataclass
class DropoutMasks:
    """Per-sequence (variational) masks, already scaled by 1/(1-p)."""
    inputs: list     # per layer, (B, n_in) or None
    recurrent: list  # per layer, (B, H) or None


def sample_masks(spec: ModelSpec, batch: int, rng: np.random.Generator) -> DropoutMasks:
    inputs, recurrent = [], []
    n_in = spec.input_size
    for ls in spec.layers:
        for p, width, dest in ((ls.dropout, n_in, inputs), (ls.recurrent_dropout, ls.units, recurrent)):
            if p > 0:
                dest.append((rng.random((batch, width)) >= p) / (1.0 - p))
            else:
                dest.append(None)
        n_in = ls.units
    return DropoutMasks(inputs, recurrent)


def _check_input(weights: ModelWeights, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != weights.spec.input_size or X.shape[1] < 1:
        raise ModelError(f"window batch shape {X.shape} does not match (B, k, "
                         f"{weights.spec.input_size})")
    return X


def forward_batch(weights: ModelWeights, X: np.ndarray,
                  masks: Optional[DropoutMasks] = None, keep_cache: bool = False):
    """Fast batched forward used by training.

    Returns ``(probs, cache)``; ``cache`` is None unless ``keep_cache``.
    """
    X = _check_input(weights, X)
    B, k, _ = X.shape
    seq = X
    caches = []
    for li, p in enumerate(weights.lstm):
        H = p.units
        mx = masks.inputs[li] if masks is not None else None
        mh = masks.recurrent[li] if masks is not None else None
        xin = seq * mx[:, None, :] if mx is not None else seq
        Zx = (xin.reshape(B * k, -1) @ p.W).reshape(B, k, 4 * H) + p.b
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((B, k, H))
        lc = {"xin": xin, "hin": [], "c_prev": [], "i": [], "f": [], "g": [], "o": [], "tc": []}
        for t in range(k):
            hin = h * mh if mh is not None else h
            z = Zx[:, t] + hin @ p.U
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            if keep_cache:
                for key, val in (("hin", hin), ("c_prev", c), ("i", i), ("f", f),
                                 ("g", g), ("o", o), ("tc", tc)):
                    lc[key].append(val)
            c = c_new
            h = o * tc
            hs[:, t] = h
        try:
            _check_finite(hs, f"LSTM layer {li}")
        except FloatingPointError as exc:
            raise ModelError(str(exc)) from None
        caches.append(lc)
        seq = hs
    top = seq[:, -1]
    with np.errstate(over="ignore", invalid="ignore"):  # checked below
        logits = top @ weights.V + weights.c
        probs = _softmax(logits)
    if not np.all(np.isfinite(probs)):
        raise ModelError("non-finite values in softmax output layer")
    cache = {"layers": caches, "top": top, "masks": masks, "X": X} if keep_cache else None
    return probs, cache


def predict_proba(weights: ModelWeights, X: np.ndarray) -> np.ndarray:
    """Eval-mode probabilities, shape (B, 2).

    Every window is pushed through the same per-row kernels regardless of
    how many windows are in the batch, so one window scored alone gives the
    bit-identical result it gets inside a large batch.
    """
    X = _check_input(weights, X)
    B, k, _ = X.shape
    seq = X
    for li, p in enumerate(weights.lstm):
        H = p.units
        h = np.zeros((B, 1, H))
        c = np.zeros((B, 1, H))
        hs = np.empty((B, k, H))
        for t in range(k):
            z = (np.matmul(seq[:, t:t + 1, :], p.W) + np.matmul(h, p.U)) + p.b
            i = _sigmoid(z[..., :H])
            f = _sigmoid(z[..., H:2 * H])
            g = np.tanh(z[..., 2 * H:3 * H])
            o = _sigmoid(z[..., 3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            hs[:, t] = h[:, 0]
        if not np.all(np.isfinite(hs)):
            raise ModelError(f"non-finite values in LSTM layer {li}")
        seq = hs
    with np.errstate(over="ignore", invalid="ignore"):  # checked below
        logits = np.matmul(seq[:, -1:, :], weights.V)[:, 0] + weights.c
        probs = _softmax(logits)
    if not np.all(np.isfinite(probs)):
        raise ModelError("non-finite values in softmax output layer")
    return probs


@dataclass
class Prediction:
    p_no_ho: float
    p_ho: float

    @property
    def probs(self) -> tuple:
        return (self.p_no_ho, self.p_ho)


def forward(weights: ModelWeights, window: np.ndarray, train_mode: bool = False,
            dropout_seed: Optional[int] = None) -> Prediction:
    """Score a single k x 12 window."""
    X = np.asarray(window, dtype=np.float64)
    if X.ndim != 2:
        raise ModelError(f"expected a (k, {weights.spec.input_size}) window, got {X.shape}")
    if train_mode:
        rng = np.random.default_rng(dropout_seed)
        masks = sample_masks(weights.spec, 1, rng)
        probs, _ = forward_batch(weights, X[None], masks)
    else:
        probs = predict_proba(weights, X[None])
    return Prediction(float(probs[0, 0]), float(probs[0, 1]))


def loss(probs: np.ndarray, labels: np.ndarray, class_weights: Sequence[float]) -> float:
    """Mean of -w_y * log(p_y) over the batch, probabilities floored at 1e-12."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    p_true = probs[np.arange(len(labels)), labels]
    return float(np.mean(-w * np.log(np.maximum(p_true, PROB_FLOOR))))


def sample_loss(pred: Prediction, label: int, class_weights: Sequence[float] = (1.0, 1.0)) -> float:
    return loss(np.array([pred.probs]), np.array([label]), class_weights)


def loss_and_grad(weights: ModelWeights, X: np.ndarray, y: np.ndarray,
                  class_weights: Sequence[float] = (1.0, 1.0),
                  masks: Optional[DropoutMasks] = None):
    """Mean weighted cross-entropy and its exact gradient (BPTT).

    Dropout masks, when given, are treated as constants.
    """
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ModelError("empty batch")
    probs, cache = forward_batch(weights, X, masks, keep_cache=True)
    B = len(y)
    cw = np.asarray(class_weights, dtype=np.float64)
    w = cw[y]
    p_true = probs[np.arange(B), y]
    value = float(np.mean(-w * np.log(np.maximum(p_true, PROB_FLOOR))))

    onehot = np.zeros_like(probs)
    onehot[np.arange(B), y] = 1.0
    # the floor is a constant below 1e-12, so no gradient flows there
    active = (p_true >= PROB_FLOOR)[:, None]
    dlogits = (w[:, None] * (probs - onehot) * active) / B

    grads = weights.zeros_like()
    grads.V[...] = cache["top"].T @ dlogits
    grads.c[...] = dlogits.sum(axis=0)
    dtop = dlogits @ weights.V.T

    Xb = cache["X"]
    _, k, _ = Xb.shape
    dseq = np.zeros((B, k, dtop.shape[1]))
    dseq[:, -1] = dtop
    for li in reversed(range(len(weights.lstm))):
        p = weights.lstm[li]
        lc = cache["layers"][li]
        H = p.units
        mh = masks.recurrent[li] if masks is not None else None
        mx = masks.inputs[li] if masks is not None else None
        dZ = np.empty((B, k, 4 * H))
        dh_rec = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(k)):
            i, f, g, o, tc = lc["i"][t], lc["f"][t], lc["g"][t], lc["o"][t], lc["tc"][t]
            dh = dseq[:, t] + dh_rec
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dZ[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * lc["c_prev"][t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            grads.lstm[li].U += lc["hin"][t].T @ dz
            dhin = dz @ p.U.T
            dh_rec = dhin * mh if mh is not None else dhin
        xin = lc["xin"]
        dZf = dZ.reshape(B * k, 4 * H)
        grads.lstm[li].W[...] = xin.reshape(B * k, -1).T @ dZf
        grads.lstm[li].b[...] = dZf.sum(axis=0)
        if li > 0:
            dxin = (dZf @ p.W.T).reshape(B, k, -1)
            dseq = dxin * mx[:, None, :] if mx is not None else dxin

    for name, a in grads.named_arrays():
        if not np.all(np.isfinite(a)):
            raise ModelError(f"non-finite gradient for {name}")
    return value, grads


def backward(weights: ModelWeights, X: np.ndarray, y: np.ndarray,
             class_weights: Sequence[float] = (1.0, 1.0),
             masks: Optional[DropoutMasks] = None) -> ModelWeights:
    return loss_and_grad(weights, X, y, class_weights, masks)[1]


def numerical_grad(weights: ModelWeights, X, y, class_weights=(1.0, 1.0),
                   eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of the mean loss, flattened in declared order."""
    w = weights.copy()
    theta = w.flat()
    out = np.empty_like(theta)
    for j in range(theta.size):
        orig = theta[j]
        theta[j] = orig + eps
        w.set_flat(theta)
        lp = loss(forward_batch(w, X)[0], y, class_weights)
        theta[j] = orig - eps
        w.set_flat(theta)
        lm = loss(forward_batch(w, X)[0], y, class_weights)
        theta[j] = orig
        out[j] = (lp - lm) / (2 * eps)
    return out


# ---------------------------------------------------------------------------
# optimizers

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, weights: ModelWeights, grads: ModelWeights) -> None:
        for (_, a), (_, g) in zip(weights.named_arrays(), grads.named_arrays()):
            a -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, weights: ModelWeights, grads: ModelWeights) -> None:
        params = [a for _, a in weights.named_arrays()]
        gs = [g for _, g in grads.named_arrays()]
        if self.m is None:
            self.m = [np.zeros_like(a) for a in params]
            self.v = [np.zeros_like(a) for a in params]
        self.t += 1
        corr1 = 1.0 - self.beta1 ** self.t
        corr2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(params, gs, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    class_weights: Optional[tuple] = None
    early_stop_patience: int = 10
    threshold: float = 0.5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ModelError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ModelError(f"unknown optimizer {self.optimizer!r}")

    def make_optimizer(self):
        return Adam(self.learning_rate) if self.optimizer == "adam" else SGD(self.learning_rate)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_precision: Optional[float]
    val_recall: Optional[float]
    val_f1: Optional[float]


@dataclass
class TrainResult:
    weights: ModelWeights
    log: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _binary_scores(probs, y, threshold):
    pred = probs[:, 1] >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    prec = tp / (tp + fp) if tp + fp else None
    rec = tp / (tp + fn) if tp + fn else None
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else None
    return prec, rec, f1


def train_arrays(X_train, y_train, X_val, y_val, spec: ModelSpec, config: TrainConfig,
                 init: Optional[ModelWeights] = None,
                 on_epoch: Optional[Callable[[EpochLog], None]] = None) -> TrainResult:
    """Minibatch training with per-sequence dropout masks and early stopping on val F1."""
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if len(y_train) == 0 or len(y_val) == 0:
        raise ModelError("training needs non-empty train and validation splits")
    cw = tuple(config.class_weights) if config.class_weights is not None else (1.0, 1.0)

    rng = np.random.default_rng(config.seed)
    weights = init.copy() if init is not None else init_weights(spec, int(rng.integers(2**63)))
    opt = config.make_optimizer()
    result = TrainResult(weights=weights.copy())
    best_f1 = -1.0
    since_best = 0
    n = len(y_train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            masks = sample_masks(spec, len(idx), rng)
            try:
                value, grads = loss_and_grad(weights, X_train[idx], y_train[idx], cw, masks)
            except ModelError as exc:
                raise DivergenceError(epoch, str(exc)) from None
            if not math.isfinite(value):
                raise DivergenceError(epoch, "training loss is NaN")
            opt.step(weights, grads)
            total += value * len(idx)
        train_loss = total / n
        if not math.isfinite(train_loss):
            raise DivergenceError(epoch, "training loss is NaN")
        try:
            val_probs = np.concatenate([forward_batch(weights, X_val[s:s + 2048])[0]
                                        for s in range(0, len(y_val), 2048)])
        except ModelError as exc:
            raise DivergenceError(epoch, str(exc)) from None
        val_loss = loss(val_probs, y_val, cw)
        prec, rec, f1 = _binary_scores(val_probs, y_val, config.threshold)
        entry = EpochLog(epoch, train_loss, val_loss, prec, rec, f1)
        result.log.append(entry)
        log.info("epoch %d train_loss=%.4f val_loss=%.4f val_P=%s val_R=%s val_F1=%s",
                 epoch, train_loss, val_loss, prec, rec, f1)
        if on_epoch is not None:
            on_epoch(entry)
        score = f1 if f1 is not None else 0.0
        if score > best_f1:
            best_f1 = score
            since_best = 0
            result.weights = weights.copy()
            result.best_epoch = epoch
        else:
            since_best += 1
            if config.early_stop_patience and since_best >= config.early_stop_patience:
                result.stopped_early = True
                break
    return result


# ---------------------------------------------------------------------------
# persistence

def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode(s: str, shape) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"), validate=True)
    n = int(np.prod(shape)) if len(shape) else 1
    if len(raw) != 8 * n:
        raise WeightFileError(f"parameter block holds {len(raw)} bytes, expected {8 * n}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_weights(path, weights: ModelWeights, metadata: Optional[dict] = None) -> None:
    """Write the versioned JSON weight file.

    ``metadata`` typically carries ``window_spec``, ``normalization``,
    ``class_weights``, ``seed`` and ``feature_order``.
    """
    weights.check_shapes()
    doc = {"format_version": FORMAT_VERSION, "spec": weights.spec.to_dict()}
    doc.update(metadata or {})
    doc["parameters"] = [{"name": n, "shape": list(a.shape), "dtype": "<f8", "data": _encode(a)}
                         for n, a in weights.named_arrays()]
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_weights(path, expect_window: Optional[dict] = None):
    """Read a weight file; returns ``(weights, metadata)``.

    ``expect_window`` (``{"history_k": .., "horizon_t": ..}``) guards against
    loading a model into a pipeline configured with another window.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"cannot read weight file {path}: {exc}") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise WeightFileError(f"{path} is not a weight file")
    if doc["format_version"] != FORMAT_VERSION:
        raise WeightFileError(f"format_version {doc['format_version']} unsupported "
                              f"(expected {FORMAT_VERSION})")
    try:
        spec = ModelSpec.from_dict(doc["spec"])
        template = init_weights(spec, 0)
        blocks = doc["parameters"]
        expected = template.named_arrays()
        if [b["name"] for b in blocks] != [n for n, _ in expected]:
            raise WeightFileError("parameter blocks do not match the declared spec")
        for b, (name, arr) in zip(blocks, expected):
            if tuple(b["shape"]) != arr.shape:
                raise WeightFileError(f"{name} has shape {tuple(b['shape'])}, spec implies {arr.shape}")
            arr[...] = _decode(b["data"], arr.shape)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, WeightFileError):
            raise
        raise WeightFileError(f"malformed weight file {path}: {exc}") from None
    template.check_shapes()
    meta = {k: v for k, v in doc.items() if k not in ("parameters", "spec")}
    if expect_window is not None:
        got = meta.get("window_spec")
        if got is None or any(got.get(key) != val for key, val in expect_window.items()):
            raise WeightFileError(f"weight file window {got} does not match pipeline {expect_window}")
    return template, meta


def iter_batches(n: int, size: int) -> Iterator[slice]:
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))
