"""Single-target label uncertainty: entropy of the mean MC-dropout prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datahub import MISSING, Dataset
from .errors import ArgumentError, NumericError
from .netcore import McPredictionSet, MlpModel, mc_forward

__all__ = ["McPredictionSet", "UoslTable", "entropy", "uosl", "uosl_table", "rank_by_uncertainty"]


def entropy(p, axis=-1) -> np.ndarray:
    """Shannon entropy in nats with ``0 * log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite probabilities")
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=axis)


def uosl(pred_set) -> np.ndarray | float:
    """Mean predictive entropy.

    Accepts a :class:`McPredictionSet` or a raw ``(T, k)`` / ``(T, n, k)``
    array of draws; returns one score per sample (a float for a single one).
    """
    draws = pred_set.draws if isinstance(pred_set, McPredictionSet) else np.asarray(pred_set, dtype=np.float64)
    if draws.ndim not in (2, 3):
        raise ArgumentError("draws must have shape (T, k) or (T, n, k)")
    h = entropy(draws.mean(axis=0))
    return float(h) if np.ndim(h) == 0 else h


@dataclass(frozen=True)
class UoslTable:
    ids: tuple[str, ...]
    scores: np.ndarray
    skipped: int = 0

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.ids, self.scores.tolist()))

    def to_records(self) -> list[dict]:
        return [{"id": i, "uosl": float(s)} for i, s in zip(self.ids, self.scores)]


def uosl_table(model: MlpModel, dataset: Dataset, T: int = 30, seed=0, batch_size: int = 512,
               labels=None) -> UoslTable:
    """UoSL for every labelled sample, in dataset order.

    ``labels`` overrides the working labels used to decide which samples are
    labelled. Batches draw from generator streams spawned off ``seed`` so the
    result does not depend on evaluation order.
    """
    lab = dataset.working if labels is None else np.asarray(labels)
    keep = np.flatnonzero(lab != MISSING)
    skipped = dataset.z - keep.size
    scores = np.empty(keep.size)
    starts = range(0, keep.size, batch_size)
    streams = np.random.SeedSequence(seed).spawn(len(starts))
    for s, ss in zip(starts, streams):
        idx = keep[s:s + batch_size]
        scores[s:s + idx.size] = uosl(mc_forward(model, dataset.features[idx], T, np.random.default_rng(ss)))
    return UoslTable(tuple(dataset.ids[i] for i in keep), scores, int(skipped))


def rank_by_uncertainty(table) -> list[str]:
    """Ids in ascending score order; equal scores fall back to id order."""
    if isinstance(table, UoslTable):
        items = list(zip(table.ids, table.scores.tolist()))
    elif isinstance(table, dict):
        items = list(table.items())
    else:
        items = list(table)
    if not items:
        raise ArgumentError("cannot rank an empty table")
    return [sid for sid, _ in sorted(items, key=lambda kv: (kv[1], kv[0]))]
