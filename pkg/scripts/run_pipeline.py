"""Train both stages on the toy corpus and report held-out restoration quality.

    python scripts/run_pipeline.py --train 64 --test 16 --out runs/pipeline
"""

import argparse
import dataclasses
import time
from pathlib import Path

from retro.metrics import format_summary
from retro.pipeline import TOY_STAGE1, TOY_STAGE2, make_toy_data, run_pipeline
from retro.training import save


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--train", type=int, default=64, help="training images")
    ap.add_argument("--test", type=int, default=16, help="held-out pairs")
    ap.add_argument("--seed", type=int, default=0, help="training seed")
    ap.add_argument("--out", type=Path, help="directory for checkpoints, logs and the summary")
    args = ap.parse_args()

    cfg1 = dataclasses.replace(TOY_STAGE1, seed=args.seed)
    cfg2 = dataclasses.replace(TOY_STAGE2, seed=args.seed)
    train, test = make_toy_data(args.train, 0), make_toy_data(args.test, 1000)
    start = time.perf_counter()
    run = run_pipeline(train, test, cfg1, cfg2)
    summary = {**run.evaluation.summary(), "seconds": time.perf_counter() - start}
    print(format_summary(summary), end="")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        for name, ck in {**run.stage1.checkpoints(cfg1), **run.stage2.checkpoints(cfg2)}.items():
            save(ck, args.out / f"{name}.ckpt")
        (args.out / "train_1.log").write_text("\n".join(run.stage1.log.lines) + "\n")
        (args.out / "train_2.log").write_text("\n".join(run.stage2.log.lines) + "\n")
        (args.out / "summary.txt").write_text(format_summary(summary))


if __name__ == "__main__":
    main()
