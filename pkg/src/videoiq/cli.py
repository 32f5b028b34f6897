"""Command-line entry point: ``videoiq <subcommand> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, PipelineState, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, apply_overrides, dump_config, load_config
from .cost import all_quantizable, cost_report, cost_report_csv, format_cost_report, resnet18_arch
from .data import DatasetFormatError, generate_dataset, read_dataset, read_manifest, write_dataset
from .evaluate import (MODES, EvalError, cross_policy_eval, dump_traces, evaluate, policy_histogram,
                       reports_csv)
from .policy import ActionSpace, PolicyNet
from .recognizer import RecognitionNet
from .train import PolicyTrainer, train_any_precision, train_teacher

log = logging.getLogger("videoiq")


class UsageError(Exception):
    pass


def _config(args) -> TrainConfig:
    if args.config is not None:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = load_config(args.config, args.set)
    else:
        cfg = apply_overrides(TrainConfig(), args.set)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _dataset(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"dataset not found: {path}")
    data = read_dataset(path)
    man = path.with_suffix(".csv")
    return data, (read_manifest(man) if man.exists() else None)


def _checkpoint(path) -> PipelineState:
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    splits = [("train", cfg.data.train_spec()), ("policy", cfg.data.policy_spec()), ("test", cfg.data.test_spec())]
    for name, spec in splits:
        if args.trimmed:
            spec = spec.trimmed()
        data, manifest = generate_dataset(spec, split=name)
        write_dataset(data, out / f"{name}.viqd", manifest)
        print(f"wrote {out / f'{name}.viqd'} ({len(data)} videos)")
    (out / "config.ini").write_text(dump_config(cfg))
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _config(args)
    data, _ = _dataset(args.data)
    history = []
    teacher = train_teacher(cfg, data, history)
    out = _out(args, "teacher.ckpt")
    save_checkpoint(out, PipelineState(cfg, teacher=teacher, stage="teacher", epoch=cfg.teacher.epochs, log=history))
    print(f"teacher final loss {history[-1]['loss'] if history else float('nan'):.4f}; wrote {out}")
    return 0


def cmd_train_recognizer(args) -> int:
    cfg = _config(args)
    data, _ = _dataset(args.data)
    prev = _checkpoint(args.teacher)
    if prev.teacher is None:
        raise UsageError(f"{args.teacher} holds no teacher")
    history = list(prev.log)
    net = train_any_precision(cfg, data, prev.teacher, history)
    out = _out(args, "recognizer.ckpt")
    save_checkpoint(out, PipelineState(cfg, teacher=prev.teacher, recognizer=net, stage="stage1",
                                       epoch=cfg.stage1.epochs, log=history))
    print(f"stage-1 final loss {history[-1]['loss']:.4f}; wrote {out}")
    return 0


def cmd_train_policy(args) -> int:
    cfg = _config(args)
    data, _ = _dataset(args.data)
    prev = _checkpoint(args.checkpoint)
    if prev.recognizer is None or prev.teacher is None:
        raise UsageError(f"{args.checkpoint} needs teacher and recognizer sections")
    actions = prev.actions
    pretrain = _dataset(args.pretrain_data)[0] if args.pretrain_data else None
    trainer = PolicyTrainer(cfg, data, prev.recognizer, prev.teacher, actions,
                            policy=prev.policy if prev.stage == "stage2" else None, pretrain_data=pretrain)
    if prev.stage == "stage2":  # resume
        trainer.epoch = prev.epoch
        trainer.load_optimizer_state(prev.optimizer)
        if prev.rng_state is not None:
            trainer.load_rng_state(prev.rng_state)
        trainer.history = [r for r in prev.log if r.get("stage") == "stage2"]
    trainer.run(args.until_epoch)
    out = _out(args, "pipeline.ckpt")
    history = [r for r in prev.log if r.get("stage") != "stage2"] + trainer.history
    save_checkpoint(out, PipelineState(cfg, prev.teacher, prev.recognizer, trainer.policy, actions, "stage2",
                                       trainer.epoch, trainer.optimizer_state(), trainer.rng_state(), history))
    print(f"stage-2 epoch {trainer.epoch} final loss {trainer.final_loss:.6f}; wrote {out}")
    return 0


def _nets_for_eval(args, data, cfg):
    if args.checkpoint:
        st = _checkpoint(args.checkpoint)
        if st.recognizer is None:
            raise UsageError(f"{args.checkpoint} holds no recognizer")
        return st.policy, st.recognizer, st.actions
    # untrained networks shaped for the dataset
    cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, spec=dataclasses.replace(
        cfg.data.spec, frame_size=data.frames.shape[-1], policy_size=data.policy_size, num_classes=data.num_classes)))
    actions = ActionSpace()
    net = RecognitionNet(cfg.recognizer_config(), seed=cfg.seed)
    return PolicyNet(cfg.policy_config(len(actions)), seed=cfg.seed), net, actions


def _random_probs(text):
    if text is None:
        return None
    return [float(x) for x in text.split(",")]


def cmd_eval(args) -> int:
    cfg = _config(args)
    data, manifest = _dataset(args.data)
    policy, net, actions = _nets_for_eval(args, data, cfg)
    reports = []
    for mode in args.mode:
        rep = evaluate(policy, net, data, mode, actions, manifest, seed=cfg.seed, random_probs=_random_probs(args.random_probs))
        rep.check()
        reports.append(rep)
        print(rep.summary())
        if args.histogram:
            print(policy_histogram(rep).text())
    if args.out:
        _out(args, "").write_text(reports_csv(reports))
    return 0


def cmd_cost_report(args) -> int:
    if args.arch != "resnet18":
        raise UsageError(f"unknown architecture {args.arch!r}")
    arch = resnet18_arch(args.classes, args.input)
    rows = cost_report(all_quantizable(arch), args.frames, arch_fp_ends=arch)
    print(format_cost_report(rows))
    if args.out:
        _out(args, "").write_text(cost_report_csv(rows))
    if args.emit_gnuplot_data:
        lines = ["# bits gflops_per_video memory_mb"]
        lines += [f"{r.variant.split('-')[1]} {r.gflops_per_video:.6f} {r.memory_mb:.6f}" for r in rows]
        Path(args.emit_gnuplot_data).write_text("\n".join(lines) + "\n")
    return 0


def cmd_dump_traces(args) -> int:
    cfg = _config(args)
    data, manifest = _dataset(args.data)
    policy, net, actions = _nets_for_eval(args, data, cfg)
    rep = evaluate(policy, net, data, args.mode, actions, manifest, seed=cfg.seed)
    out = _out(args, "traces.csv")
    n = dump_traces(rep, out, manifest)
    hist = policy_histogram(rep)
    print(hist.text())
    Path(str(out) + ".hist.csv").write_text(hist.csv())
    print(f"wrote {n} rows to {out}")
    return 0


def cmd_transfer_eval(args) -> int:
    data, manifest = _dataset(args.data)
    src = _checkpoint(args.policy_checkpoint)
    dst = _checkpoint(args.checkpoint)
    if src.policy is None or dst.recognizer is None:
        raise UsageError("need a policy checkpoint and a recognizer checkpoint")
    transferred = cross_policy_eval(src.policy, dst.recognizer, data, dst.actions, manifest)
    reports = [dataclasses.replace(transferred, mode="transferred")]
    if dst.policy is not None:
        native = cross_policy_eval(dst.policy, dst.recognizer, data, dst.actions, manifest)
        reports.insert(0, dataclasses.replace(native, mode="native"))
    for r in reports:
        print(r.summary())
    if args.out:
        _out(args, "").write_text(reports_csv(reports))
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    common.add_argument("--config", default=None, help="key=value config file")
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="videoiq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="generate the synthetic train/test splits")
    s.add_argument("--trimmed", action="store_true", help="dense-informative variant")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-teacher", parents=[common], help="train the full-precision teacher")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_train_teacher)

    s = sub.add_parser("train-recognizer", parents=[common], help="stage 1: any-precision recognizer")
    s.add_argument("--data", required=True)
    s.add_argument("--teacher", required=True, help="teacher checkpoint")
    s.set_defaults(func=cmd_train_recognizer)

    s = sub.add_parser("train-policy", parents=[common], help="stage 2: policy (resumes a stage-2 checkpoint)")
    s.add_argument("--data", required=True, help="held-out policy split")
    s.add_argument("--pretrain-data", default=None, help="split for trunk pretraining (default: --data)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--until-epoch", type=int, default=None)
    s.set_defaults(func=cmd_train_policy)

    s = sub.add_parser("eval", parents=[common], help="evaluate one or more modes")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", default=None, help="omit to evaluate untrained networks")
    s.add_argument("--mode", action="append", choices=MODES, required=True)
    s.add_argument("--random-probs", default=None, help="comma-separated action probabilities for random mode")
    s.add_argument("--histogram", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("cost-report", parents=[common], help="uniform-precision FLOPs and memory table")
    s.add_argument("--arch", default="resnet18")
    s.add_argument("--frames", type=int, default=16)
    s.add_argument("--input", type=int, default=224)
    s.add_argument("--classes", type=int, default=200)
    s.add_argument("--emit-gnuplot-data", default=None, metavar="PATH")
    s.set_defaults(func=cmd_cost_report)

    s = sub.add_parser("dump-traces", parents=[common], help="per-frame action trace CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--mode", choices=MODES, default="learned")
    s.set_defaults(func=cmd_dump_traces)

    s = sub.add_parser("transfer-eval", parents=[common], help="policy from one dataset, recognizer from another")
    s.add_argument("--data", required=True, help="test split of the recognizer's dataset")
    s.add_argument("--checkpoint", required=True, help="native pipeline checkpoint")
    s.add_argument("--policy-checkpoint", required=True, help="checkpoint holding the transferred policy")
    s.set_defaults(func=cmd_transfer_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError, DatasetFormatError, EvalError) as exc:
        print(f"videoiq {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"videoiq {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
