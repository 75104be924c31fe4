"""Sweep t_UoSL on the noisy (40%) and clean (0%) settings.

    python3 scripts/threshold_sweep.py --values 0.5 0.7 0.8 0.85 0.9 --seeds 5
"""

import argparse
from dataclasses import replace

import numpy as np

from dualunc import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--values", type=float, nargs="+", default=[0.5, 0.7, 0.8, 0.85, 0.9])
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    data = {rate: [ex.noisy_setting(s, rate) for s in range(args.seeds)] for rate in (0.4, 0.0)}
    for t in args.values:
        cfg = replace(ex.DEFAULT_CONFIG, t_uosl=t)
        cells = []
        for rate, sets in data.items():
            runs = [ex.compare(tr, gd, s, cfg) for s, (tr, gd, _) in enumerate(sets)]
            cells.append(f"rate {rate:.1f}: pipeline {np.median([r.pipeline_f1 for r in runs]):.4f} "
                         f"CE {np.median([r.baseline_f1 for r in runs]):.4f}")
        print(f"t_uosl {t:.2f}  " + "  |  ".join(cells))


if __name__ == "__main__":
    main()
