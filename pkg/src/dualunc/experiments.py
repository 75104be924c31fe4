"""Scaled-down benchmark settings shared by ``scripts/`` and the acceptance tests.

Two settings:

* ``noisy``: two Gaussian classes at 10:1 (z=2000, d=8) with loss-ranked
  asymmetric noise; the golden set is drawn clean from the same distribution.
* ``panel``: four ordered grades with strong imbalance, labelled by a simulated
  panel of six annotators whose accuracy (0.9 down to 0.45) and coverage vary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .curriculum import PipelineConfig, RunResult, fit_cross_entropy, refresh_uncertainty, run_pipeline, train_baseline
from .datahub import AnnotatorProfile, Dataset, NoiseSpec, generate_synthetic, inject_noise, simulate_panel
from .evalkit import auc
from .mcuq import uosl_table
from .netcore import MlpModel, Optimizer

NOISY_COUNTS = (1818, 182)
NOISY_GOLDEN = (1000, 100)
NOISY_SEPARATION = 2.0
DIM = 8

PANEL_COUNTS = (1000, 300, 120, 60)
PANEL_SEPARATION = 2.5
PANEL_ACCURACY = (0.9, 0.7, 0.6, 0.55, 0.5, 0.45)
PANEL_COVERAGE = (0.5, 0.8, 0.6, 0.6, 0.5, 0.5)

GOLDEN_SEED_OFFSET = 1000

DEFAULT_CONFIG = PipelineConfig()


def noisy_setting(seed: int, rate: float = 0.4, kind: str = "loss_ranked_asymmetric"):
    """Returns ``(train, golden, flipped_ids)``."""
    train = generate_synthetic(NOISY_COUNTS, DIM, NOISY_SEPARATION, seed)
    golden = generate_synthetic(NOISY_GOLDEN, DIM, NOISY_SEPARATION, GOLDEN_SEED_OFFSET + seed, id_prefix="g")
    train, flipped = inject_noise(train, NoiseSpec(kind, rate, seed))
    return train, golden, flipped


def panel_profiles(k: int = len(PANEL_COUNTS)) -> list[AnnotatorProfile]:
    return [AnnotatorProfile.with_accuracy(f"rater{j + 1}", k, a, c)
            for j, (a, c) in enumerate(zip(PANEL_ACCURACY, PANEL_COVERAGE))]


def panel_setting(seed: int):
    """Returns ``(train, golden)``; train carries panel votes and no working labels."""
    base = generate_synthetic(PANEL_COUNTS, DIM, PANEL_SEPARATION, seed)
    golden = generate_synthetic([c // 2 for c in PANEL_COUNTS], DIM, PANEL_SEPARATION,
                                GOLDEN_SEED_OFFSET + seed, id_prefix="g")
    train = simulate_panel(base, panel_profiles(), seed).with_columns(working=None)
    return train, golden


@dataclass
class Comparison:
    seed: int
    pipeline: RunResult
    baseline: RunResult

    @property
    def pipeline_f1(self) -> float:
        return self.pipeline.golden_report.last["macro_f1"]

    @property
    def baseline_f1(self) -> float:
        return self.baseline.golden_report.last["macro_f1"]

    def row(self) -> dict:
        p, b = self.pipeline.golden_report, self.baseline.golden_report
        return {"seed": self.seed,
                "pipeline_B": p.best["macro_f1"], "pipeline_L": p.last["macro_f1"], "pipeline_gap": p.gap(),
                "baseline_B": b.best["macro_f1"], "baseline_L": b.last["macro_f1"], "baseline_gap": b.gap()}


def compare(train: Dataset, golden: Dataset, seed: int, config: PipelineConfig = DEFAULT_CONFIG) -> Comparison:
    """Full pipeline against plain cross-entropy (majority-vote labels where panels exist)."""
    cfg = replace(config, seed=seed)
    return Comparison(seed, run_pipeline(train, cfg, golden), train_baseline(train, cfg, golden))


def uncertainty_separation(seed: int, warmup_epochs: int = 3, config: PipelineConfig = DEFAULT_CONFIG) -> dict:
    """UoSL after a plain-CE warmup, scored against the corrupted-id oracle."""
    train, _, flipped = noisy_setting(seed)
    model = MlpModel.build(train.d, config.hidden, train.k, config.dropout, seed)
    fit_cross_entropy(model, train.features, train.working, warmup_epochs, seed, config.lr, config.batch_size)
    tab = uosl_table(model, train, config.T, seed)
    corrupted = np.array([s in flipped for s in tab.ids])
    return {
        "seed": seed,
        "mean_uosl_corrupted": float(tab.scores[corrupted].mean()),
        "mean_uosl_clean": float(tab.scores[~corrupted].mean()),
        "auc": auc(tab.scores, corrupted.astype(int)),
    }


def corrupted_weight_trajectory(seed: int, epochs: int = 8, config: PipelineConfig = DEFAULT_CONFIG) -> list[float]:
    """Mean weight of corrupted samples when weights are refreshed after every CE epoch."""
    train, _, flipped = noisy_setting(seed)
    cfg = replace(config, seed=seed)
    corrupted = np.array([s in flipped for s in train.ids])
    model = MlpModel.build(train.d, cfg.hidden, train.k, cfg.dropout, seed)
    opt = Optimizer("adam", cfg.lr)
    out = []
    for ep in range(epochs):
        fit_cross_entropy(model, train.features, train.working, 1, seed * 1000 + ep, optimizer=opt)
        out.append(float(refresh_uncertainty(model, train, cfg, ep).weight[corrupted].mean()))
    return out
