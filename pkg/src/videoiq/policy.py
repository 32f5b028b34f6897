"""Lightweight recurrent policy that picks a precision (or skip) per frame."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost import LayerSpec
from .nn import Conv2d, Linear, LSTMCell, Module
from .tensor import Tensor, clip, concat, no_grad, softmax, straight_through


@dataclass(frozen=True)
class ActionSpace:
    actions: tuple[int, ...] = (32, 4, 2, 0)

    def __post_init__(self):
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("actions must be unique")
        if len(self.actions) < 2:
            raise ValueError("need at least two actions")
        if 0 in self.actions and self.actions[-1] != 0:
            raise ValueError("skip action (0) must come last")

    def __len__(self) -> int:
        return len(self.actions)

    def index(self, action: int) -> int:
        return self.actions.index(int(action))

    @property
    def precisions(self) -> tuple[int, ...]:
        return tuple(a for a in self.actions if a != 0)

    @property
    def has_skip(self) -> bool:
        return 0 in self.actions


@dataclass(frozen=True)
class PolicyConfig:
    input_size: int = 16
    in_channels: int = 1
    widths: tuple[int, int] = (8, 16)
    hidden: int = 32
    num_actions: int = 4


@dataclass
class PolicyState:
    h: Tensor
    c: Tensor
    step: int = 0


@dataclass
class PolicyDecision:
    pi: Tensor  # (N, |actions|)
    action: np.ndarray  # (N,) index into the action space
    soft: Tensor  # relaxed sample p
    hard: Tensor  # one-hot forward, soft backward
    tau: float


class PolicyNet(Module):
    """Two strided convs and a global pool, then an LSTM cell and a linear head."""

    def __init__(self, config: PolicyConfig = PolicyConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        c1, c2 = config.widths
        self.conv1 = Conv2d(config.in_channels, c1, 3, rng, stride=2, padding=1, bias=True)
        self.conv2 = Conv2d(c1, c2, 3, rng, stride=2, padding=1, bias=True)
        self.lstm = LSTMCell(c2, config.hidden, rng)
        self.fc = Linear(config.hidden, config.num_actions, rng)

    def extract_features(self, frames: Tensor) -> Tensor:
        """(N, C, s, s) low-resolution frames -> (N, widths[1]) features."""
        s = self.config.input_size
        if frames.ndim != 4 or frames.shape[-2:] != (s, s):
            raise ValueError(f"policy expects (N, C, {s}, {s}) frames, got {frames.shape}")
        h = self.conv1(frames).relu()
        h = self.conv2(h).relu()
        return h.mean(axis=(2, 3))

    def initial_state(self, n: int, dtype=np.float32) -> PolicyState:
        z = np.zeros((n, self.config.hidden), dtype=dtype)
        return PolicyState(Tensor(z), Tensor(z.copy()), 0)

    def step(self, feature: Tensor, state: PolicyState) -> tuple[Tensor, Tensor, PolicyState]:
        """One recurrent step: returns (pi, logits, new state)."""
        h, c = self.lstm(feature, state.h, state.c)
        logits = self.fc(h)
        return softmax(logits, axis=-1), logits, PolicyState(h, c, state.step + 1)

    def rollout(self, frames: Tensor) -> tuple[Tensor, Tensor]:
        """Run a batch of videos (N, T, C, s, s); returns (pi, logits), each (N, T, |actions|)."""
        n, t = frames.shape[:2]
        feats = self.extract_features(frames.reshape((n * t,) + frames.shape[2:]))
        feats = feats.reshape(n, t, -1)
        state = self.initial_state(n, frames.dtype)
        pis, logits = [], []
        for i in range(t):
            pi, lg, state = self.step(feats[:, i, :], state)
            pis.append(pi.reshape(n, 1, -1))
            logits.append(lg.reshape(n, 1, -1))
        return concat(pis, axis=1), concat(logits, axis=1)

    def layer_specs(self) -> list[LayerSpec]:
        c = self.config
        s1 = (c.input_size + 1) // 2
        s2 = (s1 + 1) // 2
        c1, c2 = c.widths
        return [
            LayerSpec("conv2d", c.in_channels, c1, (3, 3), (s1, s1), quantizable=False, bias=True, name="policy.conv1"),
            LayerSpec("activation", c1, c1, out_hw=(s1, s1), name="policy.relu1"),
            LayerSpec("conv2d", c1, c2, (3, 3), (s2, s2), quantizable=False, bias=True, name="policy.conv2"),
            LayerSpec("activation", c2, c2, out_hw=(s2, s2), name="policy.relu2"),
            LayerSpec("pool", c2, c2, name="policy.pool"),
            LayerSpec("recurrent-cell", c2, c.hidden, quantizable=False, name="policy.lstm"),
            LayerSpec("linear", c.hidden, c.num_actions, quantizable=False, bias=True, name="policy.fc"),
        ]


def extract_features(net: PolicyNet, frame: np.ndarray) -> np.ndarray:
    with no_grad():
        return net.extract_features(Tensor(np.asarray(frame)[None])).data[0]


def policy_step(net: PolicyNet, feature: Tensor, state: PolicyState):
    pi, _, new_state = net.step(feature, state)
    return pi, new_state


def sample_gumbel(shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return (-np.log(-np.log(u))).astype(dtype)


def gumbel_sample(pi: Tensor, tau: float, rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> PolicyDecision:
    """Gumbel-max hard sample plus its temperature-``tau`` relaxation.

    ``noise`` fixes the Gumbel draw (for tests); otherwise it is drawn from
    ``rng``. The returned ``hard`` tensor is one-hot in the forward pass and
    carries the gradient of ``soft`` backward.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if noise is None:
        if rng is None:
            raise ValueError("need rng or noise")
        noise = sample_gumbel(pi.shape, rng, pi.dtype)
    noise = np.asarray(noise, dtype=pi.dtype)
    scores = clip(pi, 1e-30, 1.0).log() + noise
    action = np.argmax(scores.data, axis=-1)
    soft = softmax(scores / tau, axis=-1)
    onehot = np.zeros(pi.shape, dtype=pi.dtype)
    np.put_along_axis(onehot, action[..., None], 1.0, axis=-1)
    return PolicyDecision(pi, action, soft, straight_through(soft, onehot), tau)


@dataclass(frozen=True)
class TemperatureSchedule:
    initial: float = 5.0
    minimum: float = 0.5
    final_epoch: int = 20
    rate: float | None = None

    @property
    def decay(self) -> float:
        if self.rate is not None:
            return self.rate
        if self.final_epoch <= 0:
            return 0.0
        return math.log(self.initial / self.minimum) / self.final_epoch


def temperature_at(epoch: float, schedule: TemperatureSchedule = TemperatureSchedule()) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return max(schedule.minimum, schedule.initial * math.exp(-schedule.decay * epoch))


def infer_action(pi: np.ndarray) -> np.ndarray:
    """Deterministic argmax; ties go to the later (cheaper) action."""
    pi = np.asarray(pi)
    k = pi.shape[-1]
    return k - 1 - np.argmax(pi[..., ::-1], axis=-1)
