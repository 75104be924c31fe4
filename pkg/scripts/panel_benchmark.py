"""Pipeline vs majority-vote cross-entropy on a simulated six-annotator panel.

    python3 scripts/panel_benchmark.py --seeds 5
"""

import argparse

import numpy as np

from dualunc import experiments as ex
from dualunc.agreement import fleiss_kappa


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--first-seed", type=int, default=0)
    args = ap.parse_args()

    pipe, base = [], []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        train, golden = ex.panel_setting(seed)
        full = train.vote_counts()[train.n_votes() == 6]
        r = ex.compare(train, golden, seed)
        pipe.append(r.pipeline_f1)
        base.append(r.baseline_f1)
        n_elim = len(r.pipeline.selection.eliminated)
        print(f"seed {seed}  eliminated {n_elim:4d}  fleiss(6 raters, n={len(full)}) {fleiss_kappa(full):.3f}  "
              f"pipeline L {r.pipeline_f1:.4f}  majority-vote L {r.baseline_f1:.4f}")
    print(f"median    pipeline {np.median(pipe):.4f}  majority vote {np.median(base):.4f}")


if __name__ == "__main__":
    main()
