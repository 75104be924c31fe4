"""How well post-warmup UoSL flags the corrupted labels.

For each seed: mean UoSL of corrupted vs clean samples and the AUC of UoSL as
a corrupted-label detector. ``--trajectory`` also prints the mean weight of the
corrupted samples when weights are refreshed after every epoch.

    python3 scripts/uncertainty_separation.py --seeds 5 --trajectory
"""

import argparse

from dualunc import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--trajectory", action="store_true")
    ap.add_argument("--epochs", type=int, default=8)
    args = ap.parse_args()

    for seed in range(args.seeds):
        r = ex.uncertainty_separation(seed, args.warmup)
        print(f"seed {seed}  uosl corrupted {r['mean_uosl_corrupted']:.4f}  clean {r['mean_uosl_clean']:.4f}  "
              f"auc {r['auc']:.4f}")
        if args.trajectory:
            traj = ex.corrupted_weight_trajectory(seed, args.epochs)
            print("        corrupted mean weight by epoch: " + " ".join(f"{w:.3f}" for w in traj))


if __name__ == "__main__":
    main()
