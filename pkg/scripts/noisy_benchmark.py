"""Pipeline vs plain cross-entropy on the imbalanced noisy-label setting.

Prints one row per seed with best (B) and last-three-mean (L) golden-set
macro-F1 for both methods, then the medians.

    python3 scripts/noisy_benchmark.py --seeds 5 --rate 0.4
"""

import argparse
import json
from dataclasses import replace

import numpy as np

from dualunc import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--rate", type=float, default=0.4)
    ap.add_argument("--kind", default="loss_ranked_asymmetric",
                    choices=["symmetric", "pair_flip", "loss_ranked_asymmetric"])
    ap.add_argument("--t-uosl", type=float, default=ex.DEFAULT_CONFIG.t_uosl)
    ap.add_argument("--refresh", default=ex.DEFAULT_CONFIG.refresh, choices=["once", "every_epoch", "never"])
    ap.add_argument("--json", action="store_true", help="emit JSON lines instead of a table")
    args = ap.parse_args()

    cfg = replace(ex.DEFAULT_CONFIG, t_uosl=args.t_uosl, refresh=args.refresh)
    rows = []
    for seed in range(args.seeds):
        train, golden, flipped = ex.noisy_setting(seed, args.rate, args.kind)
        row = {**ex.compare(train, golden, seed, cfg).row(), "flipped": len(flipped)}
        rows.append(row)
        if args.json:
            print(json.dumps(row))
        else:
            print(f"seed {seed}  flipped {len(flipped):4d}  "
                  f"pipeline B {row['pipeline_B']:.4f} L {row['pipeline_L']:.4f}  "
                  f"CE B {row['baseline_B']:.4f} L {row['baseline_L']:.4f}")
    med = {k: float(np.median([r[k] for r in rows])) for k in rows[0] if k not in ("seed", "flipped")}
    if args.json:
        print(json.dumps({"median": med}))
    else:
        print(f"median    pipeline L {med['pipeline_L']:.4f} (gap {med['pipeline_gap']:.4f})  "
              f"CE L {med['baseline_L']:.4f} (gap {med['baseline_gap']:.4f})")


if __name__ == "__main__":
    main()
