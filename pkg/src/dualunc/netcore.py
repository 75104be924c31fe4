"""Small dropout MLP in numpy: forward, exact backward, Adam/SGD, MC-dropout sampling.

Dropout sits after every hidden ReLU and is *inverted*: kept activations are
divided by the keep probability at train time, so eval mode needs no
rescaling.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, NumericError, SchemaError, StateError

MODES = ("train", "eval", "mc_eval")
CHECKPOINT_FORMAT = "dualunc-checkpoint/1"


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class _Cache:
    batch: np.ndarray
    inputs: list          # input to each linear layer (post-dropout activations)
    pre: list             # hidden pre-activations
    masks: list           # scaled dropout masks, None where inactive
    probs: np.ndarray
    version: int


class MlpModel:
    """Feed-forward classifier ``d -> hidden... -> k`` with ReLU and dropout.

    Parameters are stored as a flat list ``[W1, b1, W2, b2, ...]`` so that
    gradients and optimizer moments line up index for index.
    """

    def __init__(self, dims: Sequence[int], params: list[np.ndarray], dropout_rate: float = 0.3,
                 seed: int = 0, mode: str = "train"):
        dims = tuple(int(x) for x in dims)
        if len(dims) < 2:
            raise ArgumentError("need at least input and output dims")
        if not 0.0 <= dropout_rate < 1.0:
            raise ArgumentError(f"dropout rate must lie in [0, 1), got {dropout_rate}")
        if len(params) != 2 * (len(dims) - 1):
            raise ArgumentError("parameter list does not match layer dims")
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            if params[2 * i].shape != (a, b) or params[2 * i + 1].shape != (b,):
                raise ArgumentError(f"layer {i} parameters do not have shapes ({a}, {b}) / ({b},)")
        self.dims = dims
        self.params = [np.array(p, dtype=np.float64) for p in params]
        self.dropout_rate = float(dropout_rate)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.mode = mode
        self.version = 0
        self._cache: _Cache | None = None

    @classmethod
    def build(cls, d: int, hidden: Sequence[int], k: int, dropout_rate: float = 0.3, seed: int = 0) -> "MlpModel":
        """He-initialised weights, zero biases."""
        dims = (int(d), *map(int, hidden), int(k))
        init = np.random.default_rng([int(seed), 0x1A17])
        params = []
        for a, b in zip(dims[:-1], dims[1:]):
            params.append(init.standard_normal((a, b)) * np.sqrt(2.0 / a))
            params.append(np.zeros(b))
        return cls(dims, params, dropout_rate, seed)

    @property
    def d(self) -> int:
        return self.dims[0]

    @property
    def k(self) -> int:
        return self.dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def mode(self) -> str:
        return self._mode

    @mode.setter
    def mode(self, value: str):
        if value not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}, got {value!r}")
        self._mode = value

    def copy(self) -> "MlpModel":
        m = MlpModel(self.dims, [p.copy() for p in self.params], self.dropout_rate, self.seed, self.mode)
        m.rng.bit_generator.state = self.rng.bit_generator.state
        return m

    # -- forward / backward --------------------------------------------------

    def draw_masks(self, n: int, rng: np.random.Generator) -> list[np.ndarray | None]:
        if self.dropout_rate == 0.0:
            return [None] * (self.n_layers - 1)
        keep = 1.0 - self.dropout_rate
        return [(rng.random((n, h)) < keep) / keep for h in self.dims[1:-1]]

    def _run(self, X, masks):
        inputs, pre = [], []
        h = X
        L = self.n_layers
        for i in range(L - 1):
            inputs.append(h)
            a = h @ self.params[2 * i] + self.params[2 * i + 1]
            pre.append(a)
            h = np.maximum(a, 0.0)
            if masks[i] is not None:
                h = h * masks[i]
        inputs.append(h)
        logits = h @ self.params[2 * L - 2] + self.params[2 * L - 1]
        return logits, inputs, pre

    def _check_batch(self, batch) -> np.ndarray:
        X = np.asarray(batch, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ArgumentError(f"batch must have shape (n, {self.d}), got {X.shape}")
        return X

    def forward(self, batch, masks=None, rng=None) -> np.ndarray:
        """Row-stochastic class probabilities.

        In ``train`` / ``mc_eval`` mode fresh dropout masks are drawn from
        ``rng`` (default: the model's own generator) unless ``masks`` pins
        them. ``eval`` mode never drops units. Activations are cached for
        :meth:`backward`.
        """
        X = self._check_batch(batch)
        if masks is None:
            if self.mode == "eval":
                masks = [None] * (self.n_layers - 1)
            else:
                masks = self.draw_masks(X.shape[0], self.rng if rng is None else rng)
        elif len(masks) != self.n_layers - 1:
            raise ArgumentError("one mask (or None) per hidden layer is required")
        logits, inputs, pre = self._run(X, masks)
        probs = softmax(logits)
        self._cache = _Cache(X, inputs, pre, list(masks), probs, self.version)
        return probs

    def logits(self, batch, masks=None) -> np.ndarray:
        X = self._check_batch(batch)
        if masks is None:
            masks = [None] * (self.n_layers - 1)
        return self._run(X, masks)[0]

    def predict(self, batch) -> np.ndarray:
        """Deterministic eval-mode probabilities; leaves mode and cache untouched."""
        X = self._check_batch(batch)
        return softmax(self._run(X, [None] * (self.n_layers - 1))[0])

    def backward(self, batch, grad_probs) -> list[np.ndarray]:
        """Gradients of a loss w.r.t. every parameter, given dLoss/dprobs for the cached forward."""
        c = self._cache
        if c is None:
            raise StateError("backward called before forward")
        if c.version != self.version:
            raise StateError("cached activations are stale: parameters changed since forward")
        if batch is not c.batch and (np.shape(batch) != c.batch.shape or not np.array_equal(batch, c.batch)):
            raise StateError("backward batch differs from the cached forward batch")
        g = np.asarray(grad_probs, dtype=np.float64)
        if g.shape != c.probs.shape:
            raise ArgumentError(f"loss gradient must have shape {c.probs.shape}")
        p = c.probs
        # softmax Jacobian-vector product
        gz = p * (g - (g * p).sum(axis=1, keepdims=True))
        L = self.n_layers
        grads = [None] * len(self.params)
        for i in range(L - 1, -1, -1):
            h = c.inputs[i]
            grads[2 * i] = h.T @ gz
            grads[2 * i + 1] = gz.sum(axis=0)
            if i == 0:
                break
            gh = gz @ self.params[2 * i].T
            if c.masks[i - 1] is not None:
                gh = gh * c.masks[i - 1]
            gz = gh * (c.pre[i - 1] > 0)
        return grads

    def num_params(self) -> int:
        return sum(p.size for p in self.params)


# ---------------------------------------------------------------------------
# optimisers


@dataclass
class Optimizer:
    """Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain SGD."""

    kind: str = "adam"
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ArgumentError(f"unknown optimizer {self.kind!r}")
        if not self.lr >= 0:
            raise ArgumentError(f"learning rate must be >= 0, got {self.lr}")

    def step(self, model: MlpModel, grads: list[np.ndarray]) -> MlpModel:
        """Update ``model`` in place and return it."""
        if len(grads) != len(model.params):
            raise ArgumentError("one gradient per parameter array is required")
        for g, p in zip(grads, model.params):
            if g.shape != p.shape:
                raise ArgumentError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient; aborting training")
        if self.kind == "sgd":
            for p, g in zip(model.params, grads):
                p -= self.lr * g
        else:
            if not self.m:
                self.m = [np.zeros_like(p) for p in model.params]
                self.v = [np.zeros_like(p) for p in model.params]
            self.t += 1
            b1, b2 = self.beta1, self.beta2
            c1 = 1.0 - b1 ** self.t
            c2 = 1.0 - b2 ** self.t
            for p, g, m, v in zip(model.params, grads, self.m, self.v):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        model.version += 1
        return model


def step(optimizer: Optimizer, model: MlpModel, grads) -> MlpModel:
    return optimizer.step(model, grads)


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    optimizer: Optimizer
    factor: float = 0.5
    patience: int = 5
    mode: str = "max"
    best: float | None = None
    bad_epochs: int = 0
    n_decays: int = 0

    def report_metric(self, value: float) -> bool:
        """Record an epoch-end metric; returns True when the learning rate was decayed."""
        better = self.best is None or (value > self.best if self.mode == "max" else value < self.best)
        if better:
            self.best = float(value)
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.optimizer.lr *= self.factor
            self.bad_epochs = 0
            self.n_decays += 1
            return True
        return False


# ---------------------------------------------------------------------------
# Monte-Carlo dropout


@dataclass(frozen=True)
class McPredictionSet:
    """``T`` stochastic probability draws for ``n`` samples, shape ``(T, n, k)``."""

    draws: np.ndarray
    ids: tuple[str, ...] | None = None
    logits: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.draws.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)


def mc_forward(model: MlpModel, batch, T: int = 30, seed=0, ids=None, keep_logits=False) -> McPredictionSet:
    """``T`` forward passes with dropout active, masks drawn from ``seed`` only."""
    if int(T) < 2:
        raise ArgumentError(f"MC-dropout needs T >= 2 draws, got {T}")
    X = model._check_batch(batch)
    rng = np.random.default_rng(seed)
    draws = np.empty((int(T), X.shape[0], model.k))
    logits = np.empty_like(draws) if keep_logits else None
    for t in range(int(T)):
        z = model._run(X, model.draw_masks(X.shape[0], rng))[0]
        draws[t] = softmax(z)
        if keep_logits:
            logits[t] = z
    return McPredictionSet(draws, None if ids is None else tuple(ids), logits)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: MlpModel, path, lineage: dict | None = None) -> None:
    """Write dims, dropout rate, parameters and RNG state to one ``.npz`` file."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "dims": list(model.dims),
        "dropout_rate": model.dropout_rate,
        "seed": model.seed,
        "rng_state": model.rng.bit_generator.state,
        "mode": model.mode,
        "lineage": lineage or {},
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    arrays.update((f"p{i}", p) for i, p in enumerate(model.params))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # np.savez stamps entries with the wall clock; fixed timestamps keep files bit-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path) -> MlpModel:
    with np.load(Path(path), allow_pickle=False) as f:
        meta = json.loads(str(f["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise SchemaError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        params = [f[f"p{i}"] for i in range(2 * (len(meta["dims"]) - 1))]
    model = MlpModel(meta["dims"], params, meta["dropout_rate"], meta["seed"], meta["mode"])
    model.rng.bit_generator.state = meta["rng_state"]
    model.lineage = meta.get("lineage", {})
    return model
