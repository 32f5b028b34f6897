"""Two-stage training: full-precision teacher, any-precision recognizer, policy."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import quant
from .config import ConfigError, TrainConfig
from .cost import model_cost_table
from .data import VideoDataset
from .losses import anyprec_objective, ce_loss, policy_objective
from .nn import SGD, Adam, Linear, ParamGroup, clip_grad_norm
from .policy import ActionSpace, PolicyNet, gumbel_sample, temperature_at
from .quant import FULL_PRECISION
from .recognizer import RecognitionNet, init_from_teacher, mix_frame_predictions, teacher_probs
from .tensor import Tensor, backward, softmax

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, stage: str, seed: int, epoch: int, step: int, value: float):
        super().__init__(f"{stage}: non-finite loss {value} at seed={seed} epoch={epoch} step={step}")
        self.stage, self.seed, self.epoch, self.step = stage, seed, epoch, step


def batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s : s + batch_size]


def _check(stage, cfg, epoch, step, loss: Tensor) -> float:
    v = loss.item()
    if not np.isfinite(v):
        raise DivergenceError(stage, cfg.seed, epoch, step, v)
    return v


def recognizer_groups(net: RecognitionNet, cfg: TrainConfig, stage=None) -> list[ParamGroup]:
    """Weights with decay; BN affine and biases without; one group per clip bank."""
    stage = stage or cfg.stage1
    weights = [c.weight for c in net.convs] + [net.head.weight]
    affine = [net.head.bias] + [p for bank in net.bn.values() for m in bank for p in (m.gamma, m.beta)]
    groups = [
        ParamGroup(weights, stage.lr, stage.weight_decay, "weights"),
        ParamGroup(affine, stage.lr, 0.0, "affine"),
    ]
    for b in net.precisions:
        groups.append(ParamGroup(list(net.alpha[f"b{b}"]), cfg.quant.alpha_lr[b], cfg.quant.alpha_wd[b], f"alpha{b}"))
    return groups


def _run_recognizer_epochs(net, cfg, stage_cfg, data, targets, precisions, use_kd, name, history, rng,
                           on_step=None):
    opt = SGD(recognizer_groups(net, cfg, stage_cfg), stage_cfg.momentum)
    alphas = [a for b in net.precisions for a in net.alpha[f"b{b}"]]
    for epoch in range(stage_cfg.epochs):
        opt.set_epoch(epoch, stage_cfg.lr_step, stage_cfg.lr_gamma)
        t0, losses = time.perf_counter(), []
        for step, idx in enumerate(batches(len(data), stage_cfg.batch_size, rng)):
            opt.zero_grad()
            tp = targets[idx] if targets is not None else None
            total, terms = anyprec_objective(net, tp, data.frames[idx], data.labels[idx], precisions, True, use_kd)
            losses.append(_check(name, cfg, epoch, step, total))
            backward(total)
            opt.step()
            for a in alphas:
                quant.project_clip(a)
            if on_step is not None:
                on_step(epoch, step, terms)
        row = {"stage": name, "epoch": epoch, "loss": float(np.mean(losses)), "seconds": time.perf_counter() - t0}
        history.append(row)
        log.info("%s epoch %d loss %.4f (%.1fs)", name, epoch, row["loss"], row["seconds"])
    return history


def train_teacher(cfg: TrainConfig, data: VideoDataset, history: list | None = None) -> RecognitionNet:
    """Full-precision network trained with plain cross-entropy, then frozen."""
    net = RecognitionNet(cfg.recognizer_config((FULL_PRECISION,)), seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    history = [] if history is None else history
    _run_recognizer_epochs(net, cfg, cfg.teacher, data, None, (FULL_PRECISION,), False, "teacher", history, rng)
    net.freeze()
    return net


def train_any_precision(cfg: TrainConfig, data: VideoDataset, teacher: RecognitionNet,
                        history: list | None = None, on_step=None) -> RecognitionNet:
    """Joint training over every precision on the same batch, distilled from ``teacher``.

    Returns the network frozen and switched to the code store.
    """
    cfg.quant.check()
    net = RecognitionNet(cfg.recognizer_config(), seed=cfg.seed)
    init_from_teacher(net, teacher)
    targets = teacher_probs(teacher, data.frames)
    rng = np.random.default_rng([cfg.seed, 2])
    history = [] if history is None else history
    _run_recognizer_epochs(net, cfg, cfg.stage1, data, targets, net.precisions, True, "stage1", history, rng, on_step)
    net.freeze()
    net.freeze_store()
    return net


def pretrain_policy(cfg: TrainConfig, data: VideoDataset, policy: PolicyNet, history: list | None = None) -> PolicyNet:
    """Fit the policy's conv trunk to the recognition task at policy resolution.

    A throwaway linear head classifies each low-resolution frame and the
    frame probabilities are averaged per video, as in the recognizer.
    """
    s = cfg.stage2
    rng = np.random.default_rng([cfg.seed, 4])
    head = Linear(policy.config.widths[-1], data.num_classes, rng)
    trunk = policy.conv1.parameters() + policy.conv2.parameters()
    group = ParamGroup(trunk + head.parameters(), s.pretrain_lr, 5e-4, "trunk")
    opt = Adam([group]) if s.optimizer == "adam" else SGD([group], s.momentum)
    frames = data.policy_frames
    for epoch in range(s.pretrain_epochs):
        losses = []
        for step, idx in enumerate(batches(len(data), s.batch_size, rng)):
            opt.zero_grad()
            x = frames[idx]
            n, t = x.shape[:2]
            feats = policy.extract_features(Tensor(x.reshape((n * t,) + x.shape[2:])))
            probs = softmax(head(feats), axis=-1).reshape(n, t, -1).mean(axis=1)
            loss = ce_loss(probs, data.labels[idx])
            losses.append(_check("policy-pretrain", cfg, epoch, step, loss))
            backward(loss)
            opt.step()
        row = {"stage": "policy-pretrain", "epoch": epoch, "loss": float(np.mean(losses))}
        if history is not None:
            history.append(row)
        log.info("policy-pretrain epoch %d loss %.4f", epoch, row["loss"])
    return policy


def policy_cost_table(recognizer: RecognitionNet, policy: PolicyNet, actions: ActionSpace):
    return model_cost_table(recognizer.layer_specs(), actions.actions, policy.layer_specs())


def efficiency_scale(cfg: TrainConfig, table, frames: int) -> float:
    """Loss units per recognizer FLOP.

    By default a video run entirely at full precision costs 1, so the
    efficiency term lives on the same scale as the other loss terms.
    """
    if cfg.stage2.efficiency_scale > 0:
        return cfg.stage2.efficiency_scale
    return 1.0 / (frames * table.flops_per_frame[FULL_PRECISION])


def cache_frame_probs(recognizer: RecognitionNet, frames: np.ndarray, precisions) -> np.ndarray:
    """(N, T, K, m) frame probabilities of the frozen recognizer at every precision."""
    return np.stack([recognizer.frame_probs(frames, b) for b in precisions], axis=2)


@dataclass
class PolicyTrainer:
    """Stage-2 loop over a frozen recognizer.

    The recognizer is deterministic and frozen, so its per-frame outputs at
    each precision are computed once; each step mixes the cached outputs with
    the straight-through one-hot decisions, which is value- and
    gradient-identical to executing the sampled precision per frame.
    """

    cfg: TrainConfig
    data: VideoDataset
    recognizer: RecognitionNet
    teacher: RecognitionNet
    actions: ActionSpace = ActionSpace()
    policy: PolicyNet | None = None
    pretrain_data: VideoDataset | None = None
    epoch: int = 0
    history: list = field(default_factory=list)
    taus: list = field(default_factory=list)

    def __post_init__(self):
        if tuple(self.actions.precisions) != tuple(self.recognizer.precisions):
            raise ConfigError(f"action space {self.actions.actions} does not match recognizer {self.recognizer.precisions}")
        cfg = self.cfg
        if self.policy is None:
            self.policy = PolicyNet(cfg.policy_config(len(self.actions)), seed=cfg.seed + 17)
            if cfg.stage2.pretrain_epochs > 0:
                pretrain_policy(cfg, self.pretrain_data or self.data, self.policy, self.history)
        self.table = policy_cost_table(self.recognizer, self.policy, self.actions)
        self.costs = self.table.vector(efficiency_scale(cfg, self.table, self.data.frames.shape[1]))
        self.cache = cache_frame_probs(self.recognizer, self.data.frames, self.actions.precisions)
        self.targets = teacher_probs(self.teacher, self.data.frames)
        self.policy_frames = self.data.policy_frames
        s = cfg.stage2
        group = ParamGroup(self.policy.parameters(), s.lr, s.weight_decay, "policy")
        self.opt = Adam([group]) if s.optimizer == "adam" else SGD([group], s.momentum)
        self.rng = np.random.default_rng([cfg.seed, 3])
        self._frozen = self.recognizer.digest()

    def step(self, idx: np.ndarray, tau: float):
        s = self.cfg.stage2
        self.opt.zero_grad()
        pi, _ = self.policy.rollout(Tensor(self.policy_frames[idx]))
        dec = gumbel_sample(pi, tau, self.rng)
        video = mix_frame_predictions(self.cache[idx], dec.hard)
        total, terms = policy_objective(video, self.data.labels[idx], self.targets[idx], dec.soft, pi, self.costs,
                                        s.loss_weights, s.use_kd, s.squared_balance)
        backward(total)
        for name, p in self.recognizer.named_parameters().items():
            assert p.grad is None or not np.any(p.grad), f"recognizer parameter {name} received a gradient"
        if s.grad_clip > 0:
            clip_grad_norm(self.policy.parameters(), s.grad_clip)
        self.opt.step()
        return total, terms, dec

    def run(self, until_epoch: int | None = None) -> list:
        s = self.cfg.stage2
        end = s.epochs if until_epoch is None else min(until_epoch, s.epochs)
        while self.epoch < end:
            epoch = self.epoch
            tau = temperature_at(epoch, s.temperature)
            self.taus.append(tau)
            self.opt.set_epoch(epoch, s.lr_step, s.lr_gamma)
            t0, losses, usage = time.perf_counter(), [], np.zeros(len(self.actions))
            for step, idx in enumerate(batches(len(self.data), s.batch_size, self.rng)):
                total, terms, dec = self.step(idx, tau)
                losses.append(_check("stage2", self.cfg, epoch, step, total))
                usage += np.bincount(dec.action.ravel(), minlength=len(self.actions))
            row = {"stage": "stage2", "epoch": epoch, "loss": float(np.mean(losses)), "tau": tau,
                   "usage": (usage / usage.sum()).round(4).tolist(), "seconds": time.perf_counter() - t0}
            self.history.append(row)
            log.info("stage2 epoch %d loss %.4f tau %.3f usage %s", epoch, row["loss"], tau, row["usage"])
            self.epoch += 1
        if self.recognizer.digest() != self._frozen:
            raise AssertionError("recognizer parameters changed during policy training")
        return self.history

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"] if self.history else float("nan")

    # -- resumable state --------------------------------------------------
    def optimizer_state(self) -> dict[str, np.ndarray]:
        out = {}
        for gi, vs in enumerate(self.opt.state()):
            for pi, v in enumerate(vs):
                if v is not None:
                    out[f"{gi}.{pi}"] = v
        if isinstance(self.opt, Adam):
            out["steps"] = np.array(self.opt.steps, dtype=np.int64)
        return out

    def load_optimizer_state(self, state: dict[str, np.ndarray]) -> None:
        nested = [[state.get(f"{gi}.{pi}") for pi in range(len(g.params))] for gi, g in enumerate(self.opt.groups)]
        self.opt.load_state(nested)
        if isinstance(self.opt, Adam) and "steps" in state:
            self.opt.steps = int(state["steps"])

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def load_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


def train_policy(cfg: TrainConfig, data: VideoDataset, recognizer: RecognitionNet, teacher: RecognitionNet,
                 actions: ActionSpace = ActionSpace(), history: list | None = None,
                 pretrain_data: VideoDataset | None = None) -> PolicyNet:
    trainer = PolicyTrainer(cfg, data, recognizer, teacher, actions, pretrain_data=pretrain_data)
    trainer.run()
    if history is not None:
        history.extend(trainer.history)
    return trainer.policy
