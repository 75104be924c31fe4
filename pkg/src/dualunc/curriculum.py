"""Training pipeline: UoD filtering and adjudication, warmup, UoSL weighting, curriculum loop.

Order of operations in :func:`run_pipeline`:

1. ``select_by_uod`` drops multi-annotator samples whose disagreement exceeds
   ``t_uod`` and adjudicates the rest by majority vote.
2. A stratified validation split is carved from the surviving samples.
3. Warmup with plain cross-entropy.
4. UoSL from MC-dropout, turned into per-sample weights.
5. Curriculum epochs minimising ``alpha * focal(clean set) + beta * wCE(all)``
   with ``beta = (epoch / epoch_all)**2``.

Eliminated samples never reach step 2, so removing them from the input
leaves the whole trajectory unchanged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import agreement
from .datahub import MISSING, Dataset, write_records
from .errors import ArgumentError, FatalConfigError, NumericError
from .evalkit import epoch_metrics, summarize_run, write_metrics_log, export_plot_data, MetricsReport
from .mcuq import uosl_table
from .netcore import MlpModel, Optimizer, PlateauScheduler, save_checkpoint
from .objectives import LossConfig, WeightTable, combined_loss, compute_weights, cross_entropy

log = logging.getLogger(__name__)

REFRESH_CADENCES = ("once", "every_epoch", "never")

# independent RNG streams derived from one seed
_SPLIT, _SHUFFLE, _MC, _TIES = 1, 2, 3, 4


@dataclass(frozen=True)
class PipelineConfig:
    t_uod: float = 0.5
    t_uosl: float = 0.85
    eta: float = 0.0
    filter_on: str = "uod"
    t_iuod: float | None = None
    t_clean: float = 0.0
    T: int = 30
    warmup_epochs: int = 3
    epoch_all: int = 5
    total_epochs: int = 20
    lr: float = 3e-4
    batch_size: int = 16
    gamma: float = 2.0
    alpha: float = 1.0
    w_min: float = 0.01
    normalization: str = "minmax"
    refresh: str = "once"
    hidden: tuple[int, ...] = (64, 64)
    dropout: float = 0.3
    val_fraction: float = 0.1
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.t_uod <= 1.0:
            raise ArgumentError(f"t_uod must lie in [0, 1], got {self.t_uod}")
        if self.filter_on not in ("uod", "iuod"):
            raise ArgumentError("filter_on must be 'uod' or 'iuod'")
        if self.filter_on == "iuod" and (self.t_iuod is None or self.t_iuod < 0):
            raise ArgumentError("filtering on iUoD needs a non-negative t_iuod")
        if self.warmup_epochs < 1:
            raise ArgumentError("warmup_epochs must be >= 1")
        if self.total_epochs < self.epoch_all:
            raise ArgumentError("total_epochs must be >= epoch_all")
        if self.refresh not in REFRESH_CADENCES:
            raise ArgumentError(f"refresh must be one of {REFRESH_CADENCES}")
        if self.T < 2 or self.batch_size < 1 or not self.lr > 0:
            raise ArgumentError("need T >= 2, batch_size >= 1 and lr > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ArgumentError("val_fraction must lie in [0, 1)")
        self.loss_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(self.gamma, self.alpha, self.epoch_all, self.t_uosl, self.w_min, self.normalization)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SelectionOutcome:
    """Result of UoD filtering.

    ``eliminated`` and ``routed`` partition the labelled samples. ``selected``
    (the clean set) is a subset of ``routed``, ordered by ascending UoD.
    """

    selected: list[str]
    eliminated: list[str]
    routed: list[str]
    labels: dict[str, int]
    uod: dict[str, float]
    single_target: set[str] = field(default_factory=set)
    provenance: list[dict] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        return list(self.provenance)


# ---------------------------------------------------------------------------
# plain cross-entropy training


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[s:s + batch_size] for s in range(0, n, batch_size)]


def fit_cross_entropy(model: MlpModel, X, y, epochs: int, seed=0, lr: float = 3e-4, batch_size: int = 16,
                      optimizer: Optimizer | None = None, on_epoch=None) -> list[float]:
    """Minibatch Adam on mean cross-entropy; returns the mean loss of each epoch."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    opt = optimizer or Optimizer("adam", lr)
    rng = np.random.default_rng([int(seed), _SHUFFLE])
    model.mode = "train"
    history = []
    for ep in range(int(epochs)):
        total = 0.0
        for idx in _batches(len(y), batch_size, rng):
            xb = X[idx]
            probs = model.forward(xb)
            loss, g = cross_entropy(probs, y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite cross-entropy in epoch {ep}")
            opt.step(model, model.backward(xb, g))
            total += loss * idx.size
        history.append(total / len(y))
        if on_epoch is not None:
            on_epoch(ep, history[-1])
    return history


def warmup(model: MlpModel, dataset: Dataset, warmup_epochs: int, seed=0, lr: float = 3e-4,
           batch_size: int = 16, labels=None, optimizer=None):
    """Plain-CE training on every labelled sample; returns ``(model, loss_history)``."""
    lab = dataset.working if labels is None else np.asarray(labels)
    keep = lab != MISSING
    hist = fit_cross_entropy(model, dataset.features[keep], lab[keep], warmup_epochs, seed, lr, batch_size,
                             optimizer)
    return model, hist


# ---------------------------------------------------------------------------
# selection


def select_by_uod(dataset: Dataset, t_uod: float = 0.5, eta: float = 0.0, seed: int = 0,
                  filter_on: str = "uod", t_iuod: float | None = None, t_clean: float = 0.0) -> SelectionOutcome:
    """Split labelled samples into eliminated and routed by annotator disagreement.

    Multi-annotator samples above the threshold are eliminated; the rest are
    adjudicated by majority vote (seeded per sample) and routed onward, and
    those with ``uod <= t_clean`` join the clean set. Single-vote samples, and
    samples carrying only a working label, score the sentinel UoD of 1 but are
    routed rather than eliminated.
    """
    space = dataset.label_space
    threshold = t_uod if filter_on == "uod" else t_iuod
    selected, eliminated, routed = [], [], []
    labels, uods, prov, single = {}, {}, [], set()
    for sid, ann, wl in zip(dataset.ids, dataset.annotations, dataset.working):
        if ann.n == 0 and wl == MISSING:
            continue
        if ann.n >= 2:
            s = agreement.disagreement_score(ann, space, eta)
            score = s.uod if filter_on == "uod" else s.iuod
            rec = {"id": sid, "n": ann.n, "uod": s.uod, "iuod": s.iuod}
            uods[sid] = s.uod
            if score > threshold:
                eliminated.append(sid)
                prov.append({**rec, "decision": "eliminated", "label": None})
                continue
            counts = agreement.vote_counts(ann, space)
            tied = int((counts == counts.max()).sum()) > 1
            lab = agreement.majority_vote(ann, space, agreement.sample_seed(seed, sid))
            labels[sid] = lab
            routed.append(sid)
            clean = s.uod <= t_clean
            if clean:
                selected.append(sid)
            prov.append({**rec, "decision": "selected" if clean else "routed", "label": lab, "tie": tied})
        else:
            lab = int(ann.labels[0]) if ann.n == 1 else int(wl)
            uods[sid] = agreement.SINGLE_ANNOTATOR_SCORE
            labels[sid] = lab
            routed.append(sid)
            single.add(sid)
            prov.append({"id": sid, "n": ann.n, "uod": 1.0, "iuod": 1.0, "decision": "routed_single",
                         "label": lab})
    if not routed:
        raise FatalConfigError("every labelled sample was eliminated by the UoD filter")
    selected.sort(key=lambda s: (uods[s], s))
    return SelectionOutcome(selected, eliminated, routed, labels, uods, single, prov)


def stratified_split(ids, labels, fraction: float, seed: int):
    """Hold out ``round(fraction * n_c)`` samples of each class; returns (train_idx, val_idx)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([int(seed), _SPLIT])
    val = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n_val = int(np.floor(fraction * idx.size + 0.5))
        if n_val >= idx.size:
            n_val = idx.size - 1
        val.extend(rng.permutation(idx)[:n_val].tolist())
    val = np.sort(np.array(val, dtype=np.int64))
    train = np.setdiff1d(np.arange(labels.size), val)
    return train, val


# ---------------------------------------------------------------------------
# uncertainty


def refresh_uncertainty(model: MlpModel, dataset: Dataset, config: PipelineConfig, epoch_i: int = 0,
                        labels=None) -> WeightTable:
    """UoSL of every labelled sample under the current model, mapped to weights."""
    tab = uosl_table(model, dataset, config.T, [config.seed, _MC, int(epoch_i)], labels=labels)
    return compute_weights(tab.ids, tab.scores, config.t_uosl, config.w_min, config.normalization, dataset.k)


# ---------------------------------------------------------------------------
# the full run


@dataclass
class RunResult:
    model: MlpModel
    best_model: MlpModel
    weights: WeightTable
    selection: SelectionOutcome
    history: list[dict]
    clean_ids: list[str]
    val_ids: list[str]
    report: MetricsReport | None = None
    golden_report: MetricsReport | None = None


class _Evaluator:
    def __init__(self, val: Dataset, val_labels, golden: Dataset | None):
        self.val, self.val_labels, self.golden = val, val_labels, golden

    def __call__(self, model: MlpModel, epoch: int, phase: str, loss: float) -> dict:
        rec = {"epoch": epoch, "phase": phase, "loss": float(loss)}
        if self.val is not None and self.val.z:
            m = epoch_metrics(model.predict(self.val.features), self.val_labels, self.val.k)
            rec.update({f"val_{k}": v for k, v in m.items() if k != "confusion"})
        if self.golden is not None:
            m = epoch_metrics(model.predict(self.golden.features), self.golden.gold, self.golden.k)
            rec.update({f"golden_{k}": v for k, v in m.items()})
        return rec


def _prepare(dataset: Dataset, config: PipelineConfig, selection: SelectionOutcome):
    pool = dataset.select_ids(selection.routed)
    labels = np.array([selection.labels[s] for s in pool.ids], dtype=np.int64)
    tr, va = stratified_split(pool.ids, labels, config.val_fraction, config.seed)
    train = pool.subset(tr).with_columns(working=labels[tr])
    val = pool.subset(va).with_columns(working=labels[va])
    return train, val


def _track(model, rec, metric, best):
    v = rec.get(metric)
    if v is not None and (best[0] is None or v > best[0]):
        return (v, model.copy())
    return best


def run_pipeline(dataset: Dataset, config: PipelineConfig, golden: Dataset | None = None) -> RunResult:
    """Warmup, dual-uncertainty selection and weighting, then curriculum training."""
    selection = select_by_uod(dataset, config.t_uod, config.eta, config.seed, config.filter_on,
                              config.t_iuod, config.t_clean)
    train, val = _prepare(dataset, config, selection)
    evaluate = _Evaluator(val, val.working, golden)
    model = MlpModel.build(dataset.d, config.hidden, dataset.k, config.dropout, config.seed)
    opt = Optimizer("adam", config.lr)
    sched = PlateauScheduler(opt, config.plateau_factor, config.plateau_patience)
    history: list[dict] = []
    best = (None, model.copy())

    def end_epoch(phase, loss, epoch_i=None):
        nonlocal best
        rec = evaluate(model, len(history), phase, loss)
        rec["lr"] = opt.lr
        if epoch_i is not None:
            rec["curriculum_epoch"] = epoch_i
        if "val_macro_f1" in rec:
            sched.report_metric(rec["val_macro_f1"])
        best = _track(model, rec, "val_macro_f1", best)
        history.append(rec)

    fit_cross_entropy(model, train.features, train.working, config.warmup_epochs, config.seed, config.lr,
                      config.batch_size, opt, on_epoch=lambda ep, loss: end_epoch("warmup", loss))

    if config.refresh == "never":
        weights = WeightTable.uniform(train.ids)
    else:
        weights = refresh_uncertainty(model, train, config, 0)

    single = selection.single_target
    nu = dict(zip(weights.ids, weights.nuosl))
    in_train = set(train.ids)
    clean = [s for s in selection.selected if s in in_train]
    clean += sorted((s for s in train.ids if s in single and nu[s] <= config.t_uosl),
                    key=lambda s: (nu[s], s))
    if not clean:
        raise FatalConfigError("the clean set is empty; relax t_clean or t_uosl")
    pos = train.index_of()
    clean_idx = np.array([pos[s] for s in clean], dtype=np.int64)

    lc = config.loss_config()
    rng = np.random.default_rng([config.seed, _SHUFFLE, 1])
    Xa, ya, ids = train.features, train.working, train.ids
    clean_stream = _cycle(clean_idx, rng)
    model.mode = "train"
    for epoch_i in range(config.total_epochs):
        if config.refresh == "every_epoch" and epoch_i > 0:
            weights = refresh_uncertainty(model, train, config, epoch_i)
        total, n = 0.0, 0
        for idx in _batches(train.z, config.batch_size, rng):
            cidx = clean_stream(config.batch_size)
            loss, grads = combined_loss(
                model, (Xa[cidx], ya[cidx]), (Xa[idx], ya[idx], [ids[i] for i in idx]),
                epoch_i, lc, weights)
            opt.step(model, grads)
            total += loss
            n += 1
        end_epoch("curriculum", total / max(n, 1), epoch_i)

    model.mode = "eval"
    result = RunResult(model, best[1], weights, selection, history, clean, list(val.ids))
    _attach_reports(result)
    return result


def _cycle(idx: np.ndarray, rng: np.random.Generator):
    """Endless stream over ``idx``, reshuffled on every pass."""
    state = {"order": rng.permutation(idx), "pos": 0}

    def take(n):
        out = []
        while len(out) < n:
            if state["pos"] >= state["order"].size:
                state["order"] = rng.permutation(idx)
                state["pos"] = 0
            m = min(n - len(out), state["order"].size - state["pos"])
            out.extend(state["order"][state["pos"]:state["pos"] + m].tolist())
            state["pos"] += m
        return np.array(out, dtype=np.int64)

    return take


def train_baseline(dataset: Dataset, config: PipelineConfig, golden: Dataset | None = None,
                   adjudicate: bool = True) -> RunResult:
    """Plain cross-entropy on every labelled sample for ``warmup_epochs + total_epochs`` epochs.

    Multi-annotator samples are labelled by majority vote (seeded as in the
    pipeline), with no elimination and no weighting.
    """
    selection = select_by_uod(dataset, t_uod=1.0, seed=config.seed) if adjudicate else None
    if selection is None:
        keep = [s for s, w in zip(dataset.ids, dataset.working) if w != MISSING]
        pos = dataset.index_of()
        selection = SelectionOutcome([], [], keep, {s: int(dataset.working[pos[s]]) for s in keep}, {})
    train, val = _prepare(dataset, config, selection)
    evaluate = _Evaluator(val, val.working, golden)
    model = MlpModel.build(dataset.d, config.hidden, dataset.k, config.dropout, config.seed)
    opt = Optimizer("adam", config.lr)
    sched = PlateauScheduler(opt, config.plateau_factor, config.plateau_patience)
    history: list[dict] = []
    best = [None, model.copy()]

    def end_epoch(ep, loss):
        rec = evaluate(model, len(history), "ce", loss)
        rec["lr"] = opt.lr
        if "val_macro_f1" in rec:
            sched.report_metric(rec["val_macro_f1"])
        best[:] = _track(model, rec, "val_macro_f1", tuple(best))
        history.append(rec)

    fit_cross_entropy(model, train.features, train.working, config.warmup_epochs + config.total_epochs,
                      config.seed, config.lr, config.batch_size, opt, on_epoch=end_epoch)
    model.mode = "eval"
    result = RunResult(model, best[1], WeightTable.uniform(train.ids), selection, history, list(train.ids),
                       list(val.ids))
    _attach_reports(result)
    return result


def _attach_reports(result: RunResult):
    h = result.history
    if h and "val_macro_f1" in h[0]:
        result.report = summarize_run(h, "macro_f1", prefix="val_")
    if h and "golden_macro_f1" in h[0]:
        result.golden_report = summarize_run(h, "macro_f1", prefix="golden_")


# ---------------------------------------------------------------------------
# run directory


def save_run(result: RunResult, run_dir, config_snapshot: dict) -> Path:
    """Write config snapshot, selection, weights, metrics, plot data and checkpoints."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config_snapshot, indent=2, sort_keys=True) + "\n")
    write_records(run_dir / "selection.jsonl", result.selection.to_records())
    write_records(run_dir / "weights.jsonl", result.weights.to_records())
    write_records(run_dir / "clean_set.jsonl", [{"id": s, "rank": i} for i, s in enumerate(result.clean_ids)])
    write_metrics_log(run_dir / "metrics.jsonl", result.history, result.golden_report or result.report)
    export_plot_data(run_dir / "plot_data.csv", result.history)
    lineage = {"seed": config_snapshot.get("seed"), "config": "config.json"}
    save_checkpoint(result.model, run_dir / "last.npz", lineage)
    save_checkpoint(result.best_model, run_dir / "best.npz", lineage)
    return run_dir
