"""Train the defect detector on synthetic pairs, finetune on pseudo-real images, report AUCs.

    python scripts/run_detector.py --iters 2000
"""

import argparse
import dataclasses

from retro.metrics import format_summary
from retro.pipeline import TOY_DETECTOR, make_toy_data, run_detector


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--iters", type=int, default=TOY_DETECTOR.iterations, help="synthetic-phase iterations")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    epochs = max(args.iters // TOY_DETECTOR.iters_per_epoch, 1)
    cfg = dataclasses.replace(TOY_DETECTOR, epochs=epochs, decay_start=epochs // 2, seed=args.seed)
    res = run_detector(make_toy_data(64, 0), make_toy_data(16, 1000), cfg)
    print(format_summary(res.auc), end="")


if __name__ == "__main__":
    main()
