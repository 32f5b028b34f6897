"""End-to-end toy run: data splits, teacher, any-precision recognizer, policy."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

from .config import TrainConfig
from .data import DatasetManifest, SyntheticSpec, VideoDataset, generate_dataset
from .policy import ActionSpace, PolicyNet
from .recognizer import RecognitionNet
from .train import PolicyTrainer, train_any_precision, train_teacher

log = logging.getLogger(__name__)

Split = tuple[VideoDataset, DatasetManifest]


def make_splits(cfg: TrainConfig, trimmed: bool = False) -> dict[str, Split]:
    """train (recognizer), policy (held-out, stage 2) and test splits."""
    specs = {"train": cfg.data.train_spec(), "policy": cfg.data.policy_spec(), "test": cfg.data.test_spec()}
    out = {}
    for name, spec in specs.items():
        out[name] = generate_dataset(spec.trimmed() if trimmed else spec, split=name)
    return out


@dataclass
class PipelineResult:
    config: TrainConfig
    splits: dict[str, Split]
    teacher: RecognitionNet
    recognizer: RecognitionNet
    policy: PolicyNet
    actions: ActionSpace
    trainer: PolicyTrainer
    history: list = field(default_factory=list)
    seconds: dict[str, float] = field(default_factory=dict)


def run_pipeline(cfg: TrainConfig, actions: ActionSpace = ActionSpace(), splits: dict[str, Split] | None = None) -> PipelineResult:
    splits = splits or make_splits(cfg)
    train, _ = splits["train"]
    history: list = []
    seconds = {}

    t0 = time.perf_counter()
    teacher = train_teacher(cfg, train, history)
    seconds["teacher"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    recognizer = train_any_precision(cfg, train, teacher, history)
    seconds["stage1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    trainer = PolicyTrainer(cfg, splits["policy"][0], recognizer, teacher, actions, pretrain_data=train)
    trainer.run()
    seconds["stage2"] = time.perf_counter() - t0
    history += trainer.history
    log.info("pipeline done in %.0fs (%s)", sum(seconds.values()),
             ", ".join(f"{k} {v:.0f}s" for k, v in seconds.items()))
    return PipelineResult(cfg, splits, teacher, recognizer, trainer.policy, actions, trainer, history, seconds)


def retrain_policy(result: PipelineResult, splits: dict[str, Split], cfg: TrainConfig | None = None) -> PolicyTrainer:
    """Train a fresh policy on other data over an already trained recognizer."""
    cfg = cfg or result.config
    trainer = PolicyTrainer(cfg, splits["policy"][0], result.recognizer, result.teacher, result.actions,
                            pretrain_data=splits["train"][0])
    trainer.run()
    return trainer


def shifted_config(cfg: TrainConfig, offset: float = 3.141592653589793 / 8, seed_shift: int = 100) -> TrainConfig:
    """A second, distinct toy dataset: class angles rotated and fresh seeds."""
    d = cfg.data
    spec: SyntheticSpec = dataclasses.replace(d.spec, orientation_offset=d.spec.orientation_offset + offset)
    data = dataclasses.replace(d, spec=spec, train_seed=d.train_seed + seed_shift, test_seed=d.test_seed + seed_shift,
                               policy_seed=d.policy_seed + seed_shift)
    return dataclasses.replace(cfg, data=data)
