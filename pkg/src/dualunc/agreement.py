"""Annotator disagreement: vote histograms, UoD / iUoD, majority vote, kappa statistics."""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .datahub import AnnotationSet, Dataset, LabelSpace
from .errors import ArgumentError, EmptyAnnotationError, NumericDegenerateError

SINGLE_ANNOTATOR_SCORE = 1.0


@dataclass(frozen=True)
class EmpiricalHistogram:
    probs: np.ndarray
    n: int

    @property
    def k(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class DisagreementScore:
    uod: float
    iuod: float
    min_votes: int
    eta: float
    n: int

    @property
    def single_annotator(self) -> bool:
        return self.n == 1


def _votes(annotations) -> np.ndarray:
    if isinstance(annotations, AnnotationSet):
        return annotations.labels
    return np.asarray(annotations, dtype=np.int64).reshape(-1)


def _k(label_space) -> int:
    return label_space.k if isinstance(label_space, LabelSpace) else int(label_space)


def vote_counts(annotations, label_space) -> np.ndarray:
    votes = _votes(annotations)
    k = _k(label_space)
    if votes.size and (votes.min() < 0 or votes.max() >= k):
        raise ArgumentError(f"vote outside label space of size {k}")
    return np.bincount(votes, minlength=k)


def empirical_histogram(annotations, label_space) -> EmpiricalHistogram:
    """Fraction of the ``n`` votes cast for each class."""
    counts = vote_counts(annotations, label_space)
    n = int(counts.sum())
    if n == 0:
        raise EmptyAnnotationError("cannot build a vote histogram from zero annotations")
    return EmpiricalHistogram(counts / n, n)


def uod(hist: EmpiricalHistogram) -> float:
    """Gini impurity of the vote histogram, ``1 - sum_c p_c**2``."""
    p = np.asarray(hist.probs if isinstance(hist, EmpiricalHistogram) else hist, dtype=float)
    return float(1.0 - np.dot(p, p))


def min_observed_count(counts: np.ndarray) -> int:
    """Smallest vote count among classes that received at least one vote."""
    seen = counts[counts > 0]
    if seen.size == 0:
        raise EmptyAnnotationError("no votes")
    return int(seen.min())


def iuod(annotations, label_space, eta: float) -> float:
    """UoD scaled by ``(least vote count over voted classes) ** eta``.

    Restricting the minimum to voted classes keeps ``[0, 1]`` and
    ``[0, 0, 0, 1, 1, 1]`` apart (factors 1 and 3); over all classes the
    minimum would be 0 whenever a class went unvoted.
    """
    counts = vote_counts(annotations, label_space)
    hist = empirical_histogram(annotations, label_space)
    return float(min_observed_count(counts) ** eta * uod(hist))


def disagreement_score(annotations, label_space, eta: float = 0.0) -> DisagreementScore:
    """UoD and iUoD of one sample; a lone vote scores the sentinel 1.0."""
    counts = vote_counts(annotations, label_space)
    n = int(counts.sum())
    if n == 0:
        raise EmptyAnnotationError("sample has no annotations")
    if n == 1:
        return DisagreementScore(SINGLE_ANNOTATOR_SCORE, SINGLE_ANNOTATOR_SCORE, 1, eta, 1)
    hist = EmpiricalHistogram(counts / n, n)
    u = uod(hist)
    m = min_observed_count(counts)
    return DisagreementScore(u, float(m ** eta * u), m, eta, n)


def majority_vote(annotations, label_space, tie_break_seed=0) -> int:
    """Plurality label; ties resolved uniformly at random from ``tie_break_seed``."""
    counts = vote_counts(annotations, label_space)
    if counts.sum() == 0:
        raise EmptyAnnotationError("majority vote over zero annotations")
    top = np.flatnonzero(counts == counts.max())
    if top.size == 1:
        return int(top[0])
    return int(np.random.default_rng(tie_break_seed).choice(top))


def sample_seed(seed: int, sample_id: str) -> list[int]:
    """Per-sample RNG seed, independent of which other samples exist."""
    return [int(seed), zlib.crc32(sample_id.encode("utf-8"))]


# ---------------------------------------------------------------------------
# agreement statistics


def cohen_kappa_quadratic(rater_a, rater_b, k: int) -> float:
    """Quadratic-weighted Cohen's kappa for two raters over ``k`` ordered classes."""
    a = np.asarray(rater_a, dtype=np.int64)
    b = np.asarray(rater_b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgumentError("rater label lists must be 1-d and of equal length")
    if a.size < 2:
        raise ArgumentError("kappa needs at least two paired labels")
    if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= k:
        raise ArgumentError(f"labels outside range [0, {k})")
    observed = np.zeros((k, k))
    np.add.at(observed, (a, b), 1.0)
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / a.size
    i, j = np.indices((k, k))
    w = (i - j) ** 2 / (k - 1) ** 2
    num = float((w * observed).sum())
    den = float((w * expected).sum())
    if den == 0.0:
        if num == 0.0:
            return 1.0
        raise NumericDegenerateError("zero expected weighted disagreement")
    return 1.0 - num / den


def fleiss_kappa(vote_matrix) -> float:
    """Fleiss' kappa from a ``(subjects, classes)`` count matrix with constant row sums."""
    m = np.asarray(vote_matrix)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ArgumentError("vote matrix must be a non-empty 2-d array")
    if (m < 0).any():
        raise ArgumentError("vote counts must be non-negative")
    m = m.astype(np.float64)
    rows = m.sum(axis=1)
    n = rows[0]
    if not np.all(rows == n):
        raise ArgumentError("every subject must have the same number of ratings")
    if n < 2:
        raise ArgumentError("Fleiss' kappa needs at least two ratings per subject")
    p_i = ((m * m).sum(axis=1) - n) / (n * (n - 1))
    p_bar = p_i.mean()
    p_j = m.sum(axis=0) / (m.shape[0] * n)
    p_e = float(np.dot(p_j, p_j))
    if p_e == 1.0:
        if p_bar == 1.0:
            return 1.0
        raise NumericDegenerateError("chance agreement is 1 but observed agreement is not")
    return float((p_bar - p_e) / (1.0 - p_e))


# ---------------------------------------------------------------------------
# reports


def disagreement_table(dataset: Dataset, eta: float = 0.0) -> list[dict]:
    rows = []
    for sid, ann in zip(dataset.ids, dataset.annotations):
        if ann.n == 0:
            continue
        s = disagreement_score(ann, dataset.label_space, eta)
        rows.append({"type": "sample", "id": sid, "n": s.n, "uod": s.uod, "iuod": s.iuod,
                     "min_votes": s.min_votes, "eta": eta})
    return rows


def agreement_report(dataset: Dataset, eta: float = 0.0, seed: int = 0) -> list[dict]:
    """Pairwise and per-annotator kappas, panel Fleiss' kappa, and the per-sample UoD table.

    Per-annotator kappa compares each annotator against the majority vote of
    the samples they labelled. Fleiss' kappa uses the samples carrying the most
    common panel size (>= 2), since it needs a constant number of raters.
    """
    k = dataset.k
    by_annotator: dict[str, dict[str, int]] = {}
    for sid, ann in zip(dataset.ids, dataset.annotations):
        for v in ann.votes:
            by_annotator.setdefault(v.annotator_id, {})[sid] = v.label
    mv = {}
    for sid, ann in zip(dataset.ids, dataset.annotations):
        if ann.n:
            mv[sid] = majority_vote(ann, k, sample_seed(seed, sid))

    records = []
    for x, y in combinations(sorted(by_annotator), 2):
        shared = sorted(set(by_annotator[x]) & set(by_annotator[y]))
        rec = {"type": "pair", "annotator_a": x, "annotator_b": y, "n_items": len(shared),
               "cohen_kappa_quadratic": None}
        if len(shared) >= 2:
            rec["cohen_kappa_quadratic"] = _safe_kappa(
                [by_annotator[x][s] for s in shared], [by_annotator[y][s] for s in shared], k)
        records.append(rec)
    for x in sorted(by_annotator):
        items = sorted(by_annotator[x])
        rec = {"type": "annotator", "annotator": x, "n_items": len(items), "kappa_vs_majority": None}
        if len(items) >= 2:
            rec["kappa_vs_majority"] = _safe_kappa([by_annotator[x][s] for s in items], [mv[s] for s in items], k)
        records.append(rec)

    sizes = Counter(int(n) for n in dataset.n_votes() if n >= 2)
    panel = {"type": "panel", "n_raters": None, "n_subjects": 0, "fleiss_kappa": None}
    if sizes:
        n_raters = max(sizes, key=lambda s: (sizes[s], s))
        counts = dataset.vote_counts()[dataset.n_votes() == n_raters]
        panel.update(n_raters=n_raters, n_subjects=int(counts.shape[0]))
        try:
            panel["fleiss_kappa"] = fleiss_kappa(counts)
        except NumericDegenerateError:
            pass
    records.append(panel)
    records.extend(disagreement_table(dataset, eta))
    return records


def _safe_kappa(a, b, k):
    try:
        return cohen_kappa_quadratic(a, b, k)
    except NumericDegenerateError:
        return None
