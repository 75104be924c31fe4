"""``dualunc`` command line: one subcommand per pipeline stage.

Anything that affects numerics comes from the JSON run config; flags only name
files and directories. Errors print one line to stderr::

    error code=<code> exit=<status> msg=<json string>

Exit status: 0 ok, 2 usage, 3 data/schema, 4 numeric, 5 fatal config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import agreement, curriculum, datahub, evalkit, netcore
from .curriculum import PipelineConfig
from .datahub import AnnotatorProfile, NoiseSpec
from .errors import ArgumentError, DualUncError, StateError, UsageError

log = logging.getLogger("dualunc")

RUN_ROOT_ENV = "DUALUNC_RUN_ROOT"
METHODS = ("pipeline", "baseline")


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: tuple[int, ...] = (1818, 182)
    d: int = 8
    separation: float = 2.0
    golden_per_class: tuple[int, ...] = (1000, 100)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run; serialised as ``config.json`` in the run directory."""

    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    noise: NoiseSpec | None = None
    synth: SynthConfig | None = None
    panel: tuple[AnnotatorProfile, ...] | None = None
    train_manifest: str | None = None
    golden_manifest: str | None = None
    output_dir: str | None = None
    seed: int = 0
    method: str = "pipeline"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ArgumentError(f"method must be one of {METHODS}")

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline.to_dict(),
            "noise": None if self.noise is None else {**asdict(self.noise), "hidden": list(self.noise.hidden),
                                                      "confusion": _lists(self.noise.confusion)},
            "synth": None if self.synth is None else {k: list(v) if isinstance(v, tuple) else v
                                                      for k, v in asdict(self.synth).items()},
            "panel": None if self.panel is None else [
                {"annotator_id": p.annotator_id, "confusion": _lists(p.confusion), "coverage": p.coverage}
                for p in self.panel],
            "train_manifest": self.train_manifest,
            "golden_manifest": self.golden_manifest,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "method": self.method,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {"pipeline", "noise", "synth", "panel", "train_manifest", "golden_manifest",
                            "output_dir", "seed", "method"}
        if unknown:
            raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
        seed = int(d.get("seed", 0))
        pipe = dict(d.get("pipeline") or {})
        pipe.setdefault("seed", seed)
        noise = d.get("noise")
        synth = d.get("synth")
        panel = d.get("panel")
        try:
            return cls(
                pipeline=PipelineConfig.from_dict(pipe),
                noise=None if noise is None else NoiseSpec(**{"seed": seed, **noise}),
                synth=None if synth is None else SynthConfig(**{k: tuple(v) if isinstance(v, list) else v
                                                                 for k, v in synth.items()}),
                panel=None if panel is None else tuple(AnnotatorProfile(**p) for p in panel),
                train_manifest=d.get("train_manifest"),
                golden_manifest=d.get("golden_manifest"),
                output_dir=d.get("output_dir"),
                seed=seed,
                method=d.get("method", "pipeline"),
            )
        except TypeError as e:
            raise ArgumentError(f"bad config: {e}") from e

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ArgumentError(f"{path}: invalid JSON ({e.msg})") from e


def _lists(m):
    return None if m is None else [list(r) for r in m]


# ---------------------------------------------------------------------------
# helpers


def _input(path) -> Path:
    if path is None:
        raise UsageError("missing input path")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input not found: {p}")
    return p


def _output(path, *inputs) -> Path:
    p = Path(path)
    for i in inputs:
        if i is not None and p.resolve() == Path(i).resolve():
            raise UsageError(f"refusing to overwrite input {i}")
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def resolve_run_dir(cfg: RunConfig, override=None) -> Path:
    """``--run-dir``, else the config's ``output_dir``, else a name under ``$DUALUNC_RUN_ROOT``.

    A relative ``output_dir`` is taken relative to the run root when one is set.
    """
    if override:
        return Path(override)
    root = os.environ.get(RUN_ROOT_ENV)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        return Path(root) / out if root and not out.is_absolute() else out
    if not root:
        raise UsageError(f"no run directory: pass --run-dir, set output_dir, or set {RUN_ROOT_ENV}")
    return Path(root) / f"run-{cfg.method}-seed{cfg.seed}"


@contextmanager
def run_lock(run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"run directory {run_dir} is locked by another process") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield run_dir
    finally:
        lock.unlink(missing_ok=True)


def _config(args) -> RunConfig:
    return RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = _config(args)
    syn = cfg.synth or SynthConfig()
    out = Path(args.out_dir or resolve_run_dir(cfg))
    train = datahub.generate_synthetic(syn.n_per_class, syn.d, syn.separation, cfg.seed)
    golden = datahub.generate_synthetic(syn.golden_per_class, syn.d, syn.separation, cfg.seed + 1000, id_prefix="g")
    datahub.write_manifest(train, out / "train.jsonl")
    datahub.write_manifest(golden, out / "golden.jsonl")
    print(json.dumps({"train": str(out / "train.jsonl"), "golden": str(out / "golden.jsonl"),
                      "z_train": train.z, "z_golden": golden.z}))


def cmd_noise(args):
    cfg = _config(args)
    if cfg.noise is None:
        raise UsageError("config has no 'noise' section")
    src = _input(args.input)
    out = _output(args.out, src)
    noisy, flipped = datahub.inject_noise(datahub.read_manifest(src), cfg.noise)
    datahub.write_manifest(noisy, out)
    oracle = out.with_name(out.stem + ".flipped.json")
    oracle.write_text(json.dumps(sorted(flipped)) + "\n")
    print(json.dumps({"manifest": str(out), "flipped": len(flipped), "oracle": str(oracle)}))


def cmd_panel(args):
    cfg = _config(args)
    if not cfg.panel:
        raise UsageError("config has no 'panel' section")
    src = _input(args.input)
    out = _output(args.out, src)
    ds = datahub.simulate_panel(datahub.read_manifest(src), cfg.panel, cfg.seed)
    datahub.write_manifest(ds, out)
    print(json.dumps({"manifest": str(out), "votes": int(ds.n_votes().sum())}))


def cmd_agree(args):
    cfg = _config(args)
    src = _input(args.input)
    out = _output(args.out, src)
    records = agreement.agreement_report(datahub.read_manifest(src), cfg.pipeline.eta, cfg.seed)
    datahub.write_records(out, records)
    panel = next(r for r in records if r["type"] == "panel")
    print(json.dumps({"report": str(out), "fleiss_kappa": panel["fleiss_kappa"], "n_raters": panel["n_raters"]}))


def cmd_warmup(args):
    cfg = _config(args)
    p = cfg.pipeline
    ds = datahub.read_manifest(_input(args.input))
    sel = curriculum.select_by_uod(ds, p.t_uod, p.eta, p.seed, p.filter_on, p.t_iuod, p.t_clean)
    pool = ds.select_ids(sel.routed)
    labels = [sel.labels[s] for s in pool.ids]
    model = netcore.MlpModel.build(ds.d, p.hidden, ds.k, p.dropout, p.seed)
    _, hist = curriculum.warmup(model, pool, p.warmup_epochs, p.seed, p.lr, p.batch_size, labels=labels)
    out = Path(args.out_dir)
    netcore.save_checkpoint(model, out / "warmup.npz", {"seed": p.seed, "stage": "warmup"})
    datahub.write_records(out / "warmup_loss.jsonl", [{"epoch": i, "loss": v} for i, v in enumerate(hist)])
    print(json.dumps({"checkpoint": str(out / "warmup.npz"), "loss": hist}))


def cmd_uod(args):
    cfg = _config(args)
    p = cfg.pipeline
    src = _input(args.input)
    out = _output(args.out, src)
    sel = curriculum.select_by_uod(datahub.read_manifest(src), p.t_uod, p.eta, p.seed, p.filter_on, p.t_iuod,
                                   p.t_clean)
    datahub.write_records(out, sel.to_records())
    print(json.dumps({"selection": str(out), "selected": len(sel.selected), "routed": len(sel.routed),
                      "eliminated": len(sel.eliminated)}))


def cmd_uosl(args):
    cfg = _config(args)
    p = cfg.pipeline
    src = _input(args.input)
    out = _output(args.out, src)
    model = netcore.load_checkpoint(_input(args.checkpoint))
    ds = datahub.read_manifest(src)
    sel = curriculum.select_by_uod(ds, p.t_uod, p.eta, p.seed, p.filter_on, p.t_iuod, p.t_clean)
    pool = ds.select_ids(sel.routed)
    pool = pool.with_columns(working=[sel.labels[s] for s in pool.ids])
    wt = curriculum.refresh_uncertainty(model, pool, p, 0)
    datahub.write_records(out, wt.to_records())
    print(json.dumps({"report": str(out), "scored": len(wt), "skipped": ds.z - len(wt)}))


def cmd_train(args):
    cfg = _config(args)
    train_path = _input(args.train or cfg.train_manifest)
    golden_path = args.golden or cfg.golden_manifest
    golden = datahub.read_manifest(_input(golden_path)) if golden_path else None
    run_dir = resolve_run_dir(cfg, args.run_dir)
    ds = datahub.read_manifest(train_path)
    with run_lock(run_dir):
        if cfg.method == "pipeline":
            result = curriculum.run_pipeline(ds, cfg.pipeline, golden)
        else:
            result = curriculum.train_baseline(ds, cfg.pipeline, golden)
        snapshot = cfg.to_dict()
        snapshot["train_manifest"] = str(train_path)
        snapshot["golden_manifest"] = None if golden_path is None else str(golden_path)
        curriculum.save_run(result, run_dir, snapshot)
    rep = result.golden_report or result.report
    print(json.dumps({"run_dir": str(run_dir), "epochs": len(result.history),
                      "B_macro_f1": rep.best["macro_f1"], "L_macro_f1": rep.last["macro_f1"]}))


def cmd_eval(args):
    model = netcore.load_checkpoint(_input(args.checkpoint))
    src = _input(args.input)
    ds = datahub.read_manifest(src)
    if (ds.gold == datahub.MISSING).any():
        raise StateError("evaluation manifest needs gold labels on every sample")
    metrics = evalkit.epoch_metrics(model.predict(ds.features), ds.gold, ds.k)
    text = json.dumps(metrics, sort_keys=True)
    if args.out:
        _output(args.out, src, args.checkpoint).write_text(text + "\n")
    print(text)


def cmd_report(args):
    run_dir = _input(args.run_dir)
    recs = datahub.read_records(_input(run_dir / "metrics.jsonl"))
    history = [{k: v for k, v in r.items() if k != "type"} for r in recs if r.get("type") == "epoch"]
    prefix = "golden_" if history and "golden_macro_f1" in history[0] else "val_"
    rep = evalkit.summarize_run(history, args.metric, prefix=prefix)
    datahub.write_records(run_dir / "summary.jsonl", rep.to_records())
    evalkit.export_plot_data(run_dir / "plot_data.csv", history)
    cols = [m for m in evalkit.SCALAR_METRICS if m in rep.best]
    print("row  " + "  ".join(f"{c:>15}" for c in cols))
    for name, vals in (("B", rep.best), ("L", rep.last)):
        print(f"{name:<4} " + "  ".join(f"{vals[c]:>15.4f}" for c in cols))


COMMANDS = {
    "synth": (cmd_synth, "generate train and golden manifests"),
    "noise": (cmd_noise, "inject label noise into a manifest"),
    "panel": (cmd_panel, "simulate an annotator panel over a manifest"),
    "agree": (cmd_agree, "agreement report: kappas and per-sample UoD/iUoD"),
    "warmup": (cmd_warmup, "plain cross-entropy warmup; writes a checkpoint"),
    "uod": (cmd_uod, "UoD filtering and majority-vote adjudication"),
    "uosl": (cmd_uosl, "MC-dropout UoSL scores and weights for a checkpoint"),
    "train": (cmd_train, "full pipeline (or baseline) run into a run directory"),
    "eval": (cmd_eval, "metrics of a checkpoint on a golden manifest"),
    "report": (cmd_report, "best/last summary of a run directory"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualunc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        if name != "report" and name != "eval":
            p.add_argument("--config", "-c", help="run config JSON")
        if name in ("noise", "panel", "agree", "warmup", "uod", "uosl", "eval"):
            p.add_argument("--in", dest="input", required=True, help="input manifest")
        if name in ("noise", "panel", "agree", "uod", "uosl"):
            p.add_argument("--out", required=True)
    sub.choices["synth"].add_argument("--out-dir")
    sub.choices["warmup"].add_argument("--out-dir", required=True)
    sub.choices["uosl"].add_argument("--checkpoint", required=True)
    sub.choices["train"].add_argument("--train", help="train manifest (default: config train_manifest)")
    sub.choices["train"].add_argument("--golden", help="golden manifest (default: config golden_manifest)")
    sub.choices["train"].add_argument("--run-dir")
    sub.choices["eval"].add_argument("--checkpoint", required=True)
    sub.choices["eval"].add_argument("--out")
    sub.choices["report"].add_argument("--run-dir", required=True)
    sub.choices["report"].add_argument("--metric", default="macro_f1")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DualUncError as e:
        print(f"error code={e.code} exit={e.exit_code} msg={json.dumps(str(e))}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
