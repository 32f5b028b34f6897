"""Retrain the policy over one toy recognizer for several efficiency weights.

Shows the accuracy/cost trade-off the efficiency weight controls.
"""
import argparse
import dataclasses
import logging

from videoiq.config import TrainConfig
from videoiq.evaluate import evaluate
from videoiq.pipeline import retrain_policy, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--w1", type=float, nargs="+", default=[0.0, 0.1, 0.21, 0.5, 1.0])
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = TrainConfig()
    res = run_pipeline(cfg)
    test, man = res.splits["test"]
    full = evaluate(res.policy, res.recognizer, test, "uniform-32", res.actions, man)
    print(f"uniform-32: top1 {full.top1:.1f}%  recognizer GFLOPs/video {full.recognizer_gflops_per_video:.6f}")
    print(f"{'w1':>6}{'top1':>8}{'cost ratio':>12}  usage (32/4/2/skip)")
    for w1 in args.w1:
        s2 = cfg.stage2
        c = dataclasses.replace(cfg, stage2=dataclasses.replace(
            s2, loss_weights=dataclasses.replace(s2.loss_weights, w1=w1)))
        policy = retrain_policy(res, res.splits, c).policy
        rep = evaluate(policy, res.recognizer, test, "learned", res.actions, man)
        ratio = rep.recognizer_gflops_per_video / full.recognizer_gflops_per_video
        use = "/".join(f"{rep.usage[a]:.2f}" for a in res.actions.actions)
        print(f"{w1:>6.2f}{rep.top1:>8.1f}{ratio:>12.3f}  {use}")


if __name__ == "__main__":
    main()
