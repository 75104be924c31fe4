"""Data model, manifest I/O, synthetic data, label noise and simulated annotator panels.

A :class:`Dataset` is stored column-wise: one feature matrix, integer arrays for
the gold and working labels (``-1`` marks a missing label) and one
:class:`AnnotationSet` per sample. Values are treated as immutable; every
operation returns a new dataset.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, ParseError, SchemaError, StateError

log = logging.getLogger(__name__)

MISSING = -1
MANIFEST_FORMAT = "dualunc-manifest/1"
NOISE_KINDS = ("symmetric", "pair_flip", "loss_ranked_asymmetric")


@dataclass(frozen=True)
class LabelSpace:
    classes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))
        if len(self.classes) < 2:
            raise ArgumentError("a label space needs at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise ArgumentError(f"duplicate class identifiers in {self.classes}")

    @property
    def k(self) -> int:
        return len(self.classes)

    @classmethod
    def of_size(cls, k: int) -> "LabelSpace":
        return cls(tuple(f"c{i}" for i in range(k)))

    def check(self, label: int) -> int:
        if not 0 <= int(label) < self.k:
            raise SchemaError(f"class index {label} outside label space of size {self.k}")
        return int(label)


@dataclass(frozen=True)
class Vote:
    annotator_id: str
    label: int


@dataclass(frozen=True)
class AnnotationSet:
    votes: tuple[Vote, ...] = ()

    def __post_init__(self):
        votes = tuple(v if isinstance(v, Vote) else Vote(str(v[0]), int(v[1])) for v in self.votes)
        object.__setattr__(self, "votes", votes)
        ids = [v.annotator_id for v in votes]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"annotator ids must be unique within a sample: {ids}")

    @property
    def n(self) -> int:
        return len(self.votes)

    @property
    def labels(self) -> np.ndarray:
        return np.array([v.label for v in self.votes], dtype=np.int64)

    @classmethod
    def from_labels(cls, labels: Iterable[int], prefix: str = "a") -> "AnnotationSet":
        return cls(tuple(Vote(f"{prefix}{j}", int(y)) for j, y in enumerate(labels)))


@dataclass(frozen=True)
class Sample:
    """Row view of a dataset."""

    id: str
    features: np.ndarray
    gold_label: int | None
    working_label: int | None
    annotations: AnnotationSet


def _opt(label: int) -> int | None:
    return None if label == MISSING else int(label)


class Dataset:
    """Samples of one label space, stored as columns.

    Args:
        label_space: ordered class identifiers.
        ids: unique sample ids.
        features: ``(z, d)`` float matrix.
        gold: gold class index per sample, ``-1`` when absent.
        working: label used for training, ``-1`` when absent.
        annotations: one :class:`AnnotationSet` per sample.
    """

    def __init__(self, label_space, ids, features, gold=None, working=None, annotations=None):
        self.label_space = label_space
        self.ids = tuple(str(i) for i in ids)
        z = len(self.ids)
        feats = np.array(features, dtype=np.float64, copy=True)
        if feats.ndim != 2 or feats.shape[0] != z:
            raise SchemaError(f"features must be a ({z}, d) matrix, got shape {feats.shape}")
        feats.setflags(write=False)
        self.features = feats
        self.gold = self._label_column(gold, z, "gold")
        self.working = self._label_column(working, z, "working")
        if annotations is None:
            annotations = [AnnotationSet() for _ in range(z)]
        self.annotations = tuple(annotations)
        if len(self.annotations) != z:
            raise SchemaError("one annotation set per sample is required")
        for a in self.annotations:
            for v in a.votes:
                label_space.check(v.label)
        if len(set(self.ids)) != z:
            raise SchemaError("sample ids must be unique")

    def _label_column(self, col, z, name):
        if col is None:
            arr = np.full(z, MISSING, dtype=np.int64)
        else:
            arr = np.array([MISSING if c is None else int(c) for c in col], dtype=np.int64)
        if arr.shape != (z,):
            raise SchemaError(f"{name} labels must have one entry per sample")
        bad = (arr != MISSING) & ((arr < 0) | (arr >= self.label_space.k))
        if bad.any():
            raise SchemaError(f"{name} label {arr[bad][0]} outside label space of size {self.label_space.k}")
        arr.setflags(write=False)
        return arr

    @property
    def z(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return self.label_space.k

    def __len__(self):
        return self.z

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.ids[i], self.features[i], _opt(self.gold[i]), _opt(self.working[i]), self.annotations[i])

    def __iter__(self):
        return (self[i] for i in range(self.z))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.label_space == other.label_space
            and self.ids == other.ids
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.gold, other.gold)
            and np.array_equal(self.working, other.working)
            and self.annotations == other.annotations
        )

    def __repr__(self):
        return f"Dataset(z={self.z}, d={self.d}, k={self.k})"

    def index_of(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.ids)}

    def with_columns(self, **cols) -> "Dataset":
        kw = dict(
            label_space=self.label_space, ids=self.ids, features=self.features,
            gold=self.gold, working=self.working, annotations=self.annotations,
        )
        kw.update(cols)
        return Dataset(**kw)

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.label_space,
            [self.ids[i] for i in idx],
            self.features[idx].reshape(len(idx), self.d),
            self.gold[idx],
            self.working[idx],
            [self.annotations[i] for i in idx],
        )

    def select_ids(self, ids: Iterable[str]) -> "Dataset":
        pos = self.index_of()
        return self.subset([pos[i] for i in ids])

    def vote_counts(self) -> np.ndarray:
        """``(z, k)`` matrix of per-class vote counts."""
        out = np.zeros((self.z, self.k), dtype=np.int64)
        for i, a in enumerate(self.annotations):
            if a.n:
                np.add.at(out[i], a.labels, 1)
        return out

    def n_votes(self) -> np.ndarray:
        return np.array([a.n for a in self.annotations], dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic data


def class_directions(k: int, d: int) -> np.ndarray:
    """Fixed unit vectors, one per class: basis vectors when ``k <= d``."""
    if k <= d:
        return np.eye(k, d)
    u = np.random.default_rng(20210901).standard_normal((k, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def generate_synthetic(n_per_class, d, separation, seed, label_space=None, id_prefix="s") -> Dataset:
    """Gaussian blobs with unit covariance, class ``c`` centred at ``separation * u_c``."""
    counts = [int(n) for n in n_per_class]
    if len(counts) < 2 or any(n < 1 for n in counts):
        raise ArgumentError(f"need >= 2 classes with count >= 1 each, got {list(n_per_class)}")
    if int(d) < 2:
        raise ArgumentError(f"dimension must be >= 2, got {d}")
    if not separation > 0:
        raise ArgumentError(f"separation must be > 0, got {separation}")
    k = len(counts)
    label_space = label_space or LabelSpace.of_size(k)
    if label_space.k != k:
        raise ArgumentError("label space size does not match number of class counts")
    rng = np.random.default_rng(seed)
    centers = separation * class_directions(k, int(d))
    labels = np.repeat(np.arange(k), counts)
    X = centers[labels] + rng.standard_normal((labels.size, int(d)))
    perm = rng.permutation(labels.size)
    X, labels = X[perm], labels[perm]
    width = len(str(labels.size - 1))
    ids = [f"{id_prefix}{i:0{width}d}" for i in range(labels.size)]
    return Dataset(label_space, ids, X, gold=labels, working=labels)


# ---------------------------------------------------------------------------
# label noise


@dataclass(frozen=True)
class NoiseSpec:
    """How to corrupt working labels.

    ``warmup_epochs`` and ``hidden`` only matter for ``loss_ranked_asymmetric``,
    which trains a throwaway model on the clean labels to rank samples by loss.
    """

    kind: str = "symmetric"
    rate: float = 0.0
    seed: int = 0
    confusion: tuple | None = None
    warmup_epochs: int = 3
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ArgumentError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise ArgumentError(f"noise rate must lie in [0, 1], got {self.rate}")
        if self.confusion is not None:
            m = np.asarray(self.confusion, dtype=float)
            _check_stochastic(m, "noise confusion")
            object.__setattr__(self, "confusion", tuple(map(tuple, m.tolist())))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def _check_stochastic(m: np.ndarray, what: str, k: int | None = None):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ArgumentError(f"{what} must be square, got shape {m.shape}")
    if k is not None and m.shape[0] != k:
        raise ArgumentError(f"{what} must be {k}x{k}")
    if (m < 0).any() or np.abs(m.sum(axis=1) - 1.0).max() > 1e-9:
        raise ArgumentError(f"{what} rows must be non-negative and sum to 1")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def inject_noise(dataset: Dataset, spec: NoiseSpec) -> tuple[Dataset, set[str]]:
    """Corrupt exactly ``round_half_up(rate * z)`` working labels.

    Returns the new dataset and the ids whose working label now differs from
    gold. The id set is an evaluation oracle; training code never sees it.
    """
    if (dataset.gold == MISSING).any():
        raise StateError("noise injection needs a gold label on every sample")
    z, k = dataset.z, dataset.k
    m = round_half_up(spec.rate * z)
    working = dataset.gold.copy()
    if m == 0:
        if spec.rate > 0:
            warnings.warn(f"noise rate {spec.rate} on {z} samples rounds to zero flips; nothing corrupted")
        return dataset.with_columns(working=working), set()

    rng = np.random.default_rng(spec.seed)
    gold = dataset.gold
    if spec.kind == "symmetric":
        idx = rng.choice(z, size=m, replace=False)
        # uniform over the k-1 other classes
        shift = rng.integers(1, k, size=m)
        working[idx] = (gold[idx] + shift) % k
    elif spec.kind == "pair_flip":
        target = _pair_targets(spec.confusion, k)
        idx = rng.choice(z, size=m, replace=False)
        working[idx] = target[gold[idx]]
    else:
        idx, working[:] = _loss_ranked(dataset, spec, m)
    flipped = {dataset.ids[i] for i in np.flatnonzero(working != gold)}
    assert len(flipped) == m
    return dataset.with_columns(working=working), flipped


def _pair_targets(confusion, k: int) -> np.ndarray:
    if confusion is None:
        return (np.arange(k) + 1) % k
    m = np.array(confusion, dtype=float)
    _check_stochastic(m, "noise confusion", k)
    np.fill_diagonal(m, -np.inf)
    return np.argmax(m, axis=1)


def _loss_ranked(dataset: Dataset, spec: NoiseSpec, m: int):
    # local imports: the warmup trainer lives above this module in the stack
    from .curriculum import fit_cross_entropy
    from .netcore import MlpModel
    from .objectives import per_sample_ce

    model = MlpModel.build(dataset.d, spec.hidden, dataset.k, dropout_rate=0.3, seed=spec.seed)
    fit_cross_entropy(model, dataset.features, dataset.gold, epochs=spec.warmup_epochs, seed=spec.seed)
    probs = model.predict(dataset.features)
    loss = per_sample_ce(probs, dataset.gold)
    order = np.lexsort((np.arange(dataset.z), -loss))
    idx = order[:m]
    masked = probs.copy()
    masked[np.arange(dataset.z), dataset.gold] = -np.inf
    working = dataset.gold.copy()
    working[idx] = np.argmax(masked[idx], axis=1)
    return idx, working


# ---------------------------------------------------------------------------
# annotator panels


@dataclass(frozen=True)
class AnnotatorProfile:
    annotator_id: str
    confusion: tuple
    coverage: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.confusion, dtype=float)
        _check_stochastic(m, f"confusion of annotator {self.annotator_id}")
        object.__setattr__(self, "confusion", tuple(map(tuple, m.tolist())))
        if not 0.0 < self.coverage <= 1.0:
            raise ArgumentError(f"coverage must lie in (0, 1], got {self.coverage}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.confusion, dtype=float)

    @classmethod
    def with_accuracy(cls, annotator_id, k, accuracy, coverage=1.0, neighbour_only=False):
        """Correct with probability ``accuracy``; errors spread uniformly, or onto adjacent grades."""
        m = np.zeros((k, k))
        for c in range(k):
            if neighbour_only:
                nb = [j for j in (c - 1, c + 1) if 0 <= j < k]
                m[c, nb] = (1 - accuracy) / len(nb)
            else:
                m[c] = (1 - accuracy) / (k - 1)
            m[c, c] = accuracy
        return cls(annotator_id, m, coverage)


def simulate_panel(dataset: Dataset, profiles: Sequence[AnnotatorProfile], seed) -> Dataset:
    """Replace every sample's annotations with votes from the simulated panel."""
    if not profiles:
        raise ArgumentError("at least one annotator profile is required")
    if (dataset.gold == MISSING).any():
        raise StateError("panel simulation needs a gold label on every sample")
    k = dataset.k
    mats = np.stack([p.matrix for p in profiles])
    if mats.shape[1:] != (k, k):
        raise ArgumentError(f"annotator confusions must be {k}x{k}")
    cover = np.array([p.coverage for p in profiles])
    rng = np.random.default_rng(seed)
    z, a = dataset.z, len(profiles)
    casts = rng.random((z, a)) < cover
    u = rng.random((z, a))
    cdf = np.cumsum(mats[:, dataset.gold, :], axis=2).transpose(1, 0, 2)  # (z, a, k)
    votes = np.minimum((u[..., None] >= cdf).sum(axis=2), k - 1)
    annotations = []
    for i in range(z):
        annotations.append(AnnotationSet(tuple(
            Vote(profiles[j].annotator_id, int(votes[i, j])) for j in range(a) if casts[i, j]
        )))
    return dataset.with_columns(annotations=annotations)


# ---------------------------------------------------------------------------
# manifests


def write_manifest(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {"type": "header", "format": MANIFEST_FORMAT,
                  "classes": list(dataset.label_space.classes), "d": dataset.d}
        fh.write(json.dumps(header) + "\n")
        for s in dataset:
            rec = {
                "id": s.id,
                "features": [float(x) for x in s.features],
                "gold_label": s.gold_label,
                "working_label": s.working_label,
                "annotations": [{"annotator_id": v.annotator_id, "label": v.label} for v in s.annotations.votes],
            }
            fh.write(json.dumps(rec) + "\n")


def read_manifest(path) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty manifest", line=1)
    header = _json_line(lines[0], 1)
    if header.get("type") != "header" or "classes" not in header or "d" not in header:
        raise ParseError("first record must be a header with 'classes' and 'd'", line=1)
    try:
        space = LabelSpace(tuple(header["classes"]))
    except ArgumentError as e:
        raise SchemaError(str(e)) from e
    d = int(header["d"])
    ids, feats, gold, working, anns = [], [], [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        rec = _json_line(raw, lineno)
        try:
            sid = rec["id"]
            x = [float(v) for v in rec["features"]]
            g, w = rec.get("gold_label"), rec.get("working_label")
            votes = [(str(v["annotator_id"]), v["label"]) for v in rec.get("annotations") or []]
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed sample record ({e!r})", line=lineno) from e
        if len(x) != d:
            raise ParseError(f"expected {d} features, got {len(x)}", line=lineno)
        for lab in [g, w] + [v[1] for v in votes]:
            if lab is not None and (not isinstance(lab, int) or isinstance(lab, bool)):
                raise ParseError(f"labels must be integers or null, got {lab!r}", line=lineno)
            if lab is not None and not 0 <= lab < space.k:
                raise SchemaError(f"line {lineno}: class index {lab} outside label space of size {space.k}")
        try:
            anns.append(AnnotationSet(tuple(Vote(a, int(y)) for a, y in votes)))
        except SchemaError as e:
            raise SchemaError(f"line {lineno}: {e}") from e
        ids.append(sid)
        feats.append(x)
        gold.append(g)
        working.append(w)
    X = np.array(feats, dtype=np.float64).reshape(len(ids), d)
    return Dataset(space, ids, X, gold, working, anns)


def _json_line(raw: str, lineno: int) -> dict:
    try:
        rec = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON ({e.msg})", line=lineno) from e
    if not isinstance(rec, dict):
        raise ParseError("each record must be a JSON object", line=lineno)
    return rec


def write_records(path, records: Iterable[dict]) -> None:
    """Line-delimited JSON, the format family shared by every report."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=False) + "\n")


def read_records(path) -> list[dict]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip():
                out.append(_json_line(raw, lineno))
    return out
