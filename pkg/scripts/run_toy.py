"""Train the default toy pipeline and print the evaluation table.

    python3 scripts/run_toy.py --out runs/toy
"""
import argparse
import json
import logging
from pathlib import Path

import numpy as np

from videoiq.checkpoint import PipelineState, save_checkpoint
from videoiq.config import TrainConfig, apply_overrides
from videoiq.evaluate import evaluate, informative_alignment, policy_histogram, reports_csv
from videoiq.pipeline import run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = apply_overrides(TrainConfig(seed=args.seed), args.set)
    res = run_pipeline(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    test, man = res.splits["test"]
    reports = []
    for mode in ("uniform-32", "uniform-4", "uniform-2", "ensemble", "learned"):
        rep = evaluate(res.policy, res.recognizer, test, mode, res.actions, man)
        reports.append(rep)
        print(rep.summary())
    learned = reports[-1]
    usage = [learned.usage[a] for a in res.actions.actions]
    rand = [evaluate(res.policy, res.recognizer, test, "random", res.actions, man, seed=s, random_probs=usage)
            for s in range(5)]
    print(f"cost-matched random: top1 {np.mean([r.top1 for r in rand]):.2f}% over 5 seeds")
    p_inf, p_un = informative_alignment(learned)
    print(f"P(32-bit | informative) {p_inf:.3f}  P(32-bit | uninformative) {p_un:.3f}")
    print(policy_histogram(learned).text())

    (out / "eval.csv").write_text(reports_csv(reports + rand[:1]))
    (out / "history.json").write_text(json.dumps(res.history, indent=1))
    save_checkpoint(out / "pipeline.ckpt", PipelineState(cfg, res.teacher, res.recognizer, res.policy, res.actions,
                                                         "stage2", res.trainer.epoch, res.trainer.optimizer_state(),
                                                         res.trainer.rng_state(), res.history))
    print(f"timings: {', '.join(f'{k} {v:.0f}s' for k, v in res.seconds.items())}; wrote {out}")


if __name__ == "__main__":
    main()
