"""Losses with analytic gradients w.r.t. predicted probabilities, and the UoSL weight rule.

Every loss is a batch mean. Probabilities are clamped to ``[EPS_P, 1 - EPS_P]``
before any log or reciprocal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError, NumericError, StateError

EPS_P = 1e-12
W_MIN = 0.01
NORMALIZATIONS = ("minmax", "logk")


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    alpha: float = 1.0
    epoch_all: int = 5
    t_uosl: float = 0.5
    w_min: float = W_MIN
    normalization: str = "minmax"

    def __post_init__(self):
        if self.gamma < 0:
            raise ArgumentError(f"focal gamma must be >= 0, got {self.gamma}")
        if not self.alpha > 0:
            raise ArgumentError(f"alpha must be > 0, got {self.alpha}")
        if int(self.epoch_all) < 1:
            raise ArgumentError(f"epoch_all must be >= 1, got {self.epoch_all}")
        if not 0.0 <= self.t_uosl <= 1.0:
            raise ArgumentError(f"t_uosl must lie in [0, 1], got {self.t_uosl}")
        if not 0.0 < self.w_min <= 1.0:
            raise ArgumentError(f"w_min must lie in (0, 1], got {self.w_min}")
        if self.normalization not in NORMALIZATIONS:
            raise ArgumentError(f"normalization must be one of {NORMALIZATIONS}")


def _true_class_probs(probs, labels):
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise ArgumentError(f"probs {p.shape} and labels {y.shape} do not line up")
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite probabilities")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ArgumentError("label outside the probability columns")
    rows = np.arange(y.size)
    return p, y, rows, np.clip(p[rows, y], EPS_P, 1.0 - EPS_P)


def per_sample_ce(probs, labels) -> np.ndarray:
    _, _, _, pt = _true_class_probs(probs, labels)
    return -np.log(pt)


def focal_loss(probs, labels, gamma: float = 2.0):
    """Mean of ``-(1 - p_t)**gamma * log(p_t)``; returns ``(loss, dloss/dprobs)``."""
    p, y, rows, pt = _true_class_probs(probs, labels)
    n = y.size
    grad = np.zeros_like(p)
    if n == 0:
        return 0.0, grad
    logp = np.log(pt)
    q = 1.0 - pt
    if gamma == 0:
        loss = -logp
        dpt = -1.0 / pt
    else:
        mod = q ** gamma
        loss = -mod * logp
        dpt = gamma * q ** (gamma - 1.0) * logp - mod / pt
    grad[rows, y] = dpt / n
    return float(loss.sum() / n), grad


def _weighted_ce_kernel(probs, labels, weights):
    p, y, rows, pt = _true_class_probs(probs, labels)
    w = np.asarray(weights, dtype=np.float64)
    n = y.size
    grad = np.zeros_like(p)
    if n == 0:
        return 0.0, grad
    grad[rows, y] = -w / (pt * n)
    return float(np.dot(w, -np.log(pt)) / n), grad


def weighted_ce(probs, labels, weights):
    """Mean of ``-w_i * log(p_t)`` with ``w_i`` in ``(0, 1]``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (np.shape(labels)[0],):
        raise ArgumentError("exactly one weight per sample is required")
    if np.any(w <= 0) or np.any(w > 1):
        raise ArgumentError("sample weights must lie in (0, 1]")
    return _weighted_ce_kernel(probs, labels, w)


def cross_entropy(probs, labels):
    return _weighted_ce_kernel(probs, labels, np.ones(np.shape(labels)[0]))


def beta_schedule(epoch_i: float, epoch_all: int) -> float:
    """``(epoch_i / epoch_all)**2``, held at 1 past the horizon."""
    if epoch_i < 0:
        raise ArgumentError("epoch index must be >= 0")
    return min((epoch_i / epoch_all) ** 2, 1.0)


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class WeightTable:
    ids: tuple[str, ...]
    uosl: np.ndarray
    nuosl: np.ndarray
    weight: np.ndarray
    t_uosl: float

    def __post_init__(self):
        object.__setattr__(self, "_pos", {sid: i for i, sid in enumerate(self.ids)})

    def __len__(self):
        return len(self.ids)

    def weights_for(self, ids: Sequence[str]) -> np.ndarray:
        try:
            return self.weight[[self._pos[i] for i in ids]]
        except KeyError as e:
            raise StateError(f"no weight recorded for sample {e.args[0]!r}") from None

    def nuosl_for(self, ids: Sequence[str]) -> np.ndarray:
        try:
            return self.nuosl[[self._pos[i] for i in ids]]
        except KeyError as e:
            raise StateError(f"no uncertainty recorded for sample {e.args[0]!r}") from None

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.ids, self.weight.tolist()))

    def to_records(self) -> list[dict]:
        return [{"id": i, "uosl": float(u), "nuosl": float(nu), "weight": float(w)}
                for i, u, nu, w in zip(self.ids, self.uosl, self.nuosl, self.weight)]

    @classmethod
    def from_records(cls, records, t_uosl: float) -> "WeightTable":
        recs = [r for r in records if "weight" in r]
        return cls(tuple(r["id"] for r in recs),
                   np.array([r["uosl"] for r in recs], dtype=float),
                   np.array([r["nuosl"] for r in recs], dtype=float),
                   np.array([r["weight"] for r in recs], dtype=float), t_uosl)

    @classmethod
    def uniform(cls, ids) -> "WeightTable":
        ids = tuple(ids)
        z = np.zeros(len(ids))
        return cls(ids, z, z.copy(), np.ones(len(ids)), 1.0)


def normalize_uosl(scores, normalization: str = "minmax", k: int | None = None) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if normalization == "logk":
        if k is None or k < 2:
            raise ArgumentError("log-k normalisation needs the class count")
        return np.clip(s / np.log(k), 0.0, 1.0)
    lo, hi = s.min(), s.max()
    if hi > lo:
        return (s - lo) / (hi - lo)
    return np.zeros_like(s)


def compute_weights(ids, uosl_scores, t_uosl: float, w_min: float = W_MIN,
                    normalization: str = "minmax", k: int | None = None) -> WeightTable:
    """Weight 1 up to the normalised-uncertainty threshold, ``1 - nUoSL`` above it, floored at ``w_min``."""
    ids = tuple(ids)
    s = np.asarray(uosl_scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 1 or s.size != len(ids):
        raise ArgumentError("need one uncertainty score per id, at least one")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise ArgumentError("uncertainty scores must be finite and >= 0")
    nu = normalize_uosl(s, normalization, k)
    w = np.where(nu > t_uosl, np.maximum(1.0 - nu, w_min), 1.0)
    return WeightTable(ids, s, nu, w, float(t_uosl))


# ---------------------------------------------------------------------------
# combined objective


def combined_loss(model, clean_batch, all_batch, epoch_i, config: LossConfig, weight_table: WeightTable,
                  masks=None):
    """``alpha * focal(clean) + beta(epoch_i) * weighted_ce(all)`` and its parameter gradients.

    ``clean_batch`` is ``(X, y)`` drawn from the selected set; ``all_batch`` is
    ``(X, y, ids)`` drawn from every training sample. ``masks`` optionally pins
    the dropout masks of the two forward passes.
    """
    Xc, yc = clean_batch
    Xa, ya, ids_a = all_batch
    w = weight_table.weights_for(ids_a)
    beta = beta_schedule(epoch_i, config.epoch_all)
    mc, ma = masks if masks is not None else (None, None)

    grads = [np.zeros_like(p) for p in model.params]
    total = 0.0
    if len(yc):
        probs = model.forward(Xc, masks=mc)
        fl, g = focal_loss(probs, yc, config.gamma)
        total += config.alpha * fl
        for acc, gp in zip(grads, model.backward(Xc, g)):
            acc += config.alpha * gp
    if beta > 0 and len(ya):
        probs = model.forward(Xa, masks=ma)
        wce, g = weighted_ce(probs, ya, w)
        total += beta * wce
        for acc, gp in zip(grads, model.backward(Xa, g)):
            acc += beta * gp
    if not np.isfinite(total):
        raise NumericError(f"non-finite combined loss at epoch {epoch_i}")
    return total, grads
