"""Small module system on top of :mod:`videoiq.tensor`: layers and optimizers."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor, batch_norm, conv2d


def _init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)  # He-uniform
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    """Attribute-walking container.

    Tensors are parameters (frozen ones included); plain numpy arrays are
    buffers. Lists, tuples, dicts and child modules are traversed with
    dotted names, so ``named_parameters`` is stable across runs.
    """

    def _walk(self, prefix: str = "") -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk_value(f"{prefix}{name}", value)

    def named_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self._walk() if isinstance(v, Tensor)}

    def parameters(self) -> list[Tensor]:
        """Trainable parameters only."""
        return [p for p in self.named_parameters().values() if p.requires_grad]

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self._walk() if isinstance(v, np.ndarray)}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        state.update({k: v.copy() for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params, buffers = self.named_parameters(), self.named_buffers()
        missing = (set(params) | set(buffers)) - set(state)
        if strict and missing:
            raise KeyError(f"missing entries in state: {sorted(missing)}")
        for k, arr in state.items():
            if k in params:
                if params[k].shape != arr.shape:
                    raise ValueError(f"shape mismatch for {k}: {params[k].shape} vs {arr.shape}")
                params[k].data[...] = arr
            elif k in buffers:
                buffers[k][...] = arr
            elif strict:
                raise KeyError(f"unexpected entry {k}")

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def freeze(self) -> None:
        for p in self.named_parameters().values():
            p.requires_grad = False
            p.grad = None

    def digest(self) -> str:
        """SHA-256 over every parameter and buffer, in name order."""
        h = hashlib.sha256()
        for k, v in sorted(self.state_dict().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()


def _walk_value(name: str, value) -> Iterator[tuple[str, object]]:
    if isinstance(value, (Tensor, np.ndarray)):
        yield name, value
    elif isinstance(value, Module):
        yield from value._walk(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk_value(f"{name}.{i}", v)
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk_value(f"{name}.{k}", v)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(_init_uniform(rng, (in_features, out_features), in_features) / np.sqrt(2), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1, padding: int = 0, bias: bool = False):
        self.weight = Tensor(_init_uniform(rng, (cout, cin, k, k), cin * k * k), requires_grad=True)
        self.bias = Tensor(np.zeros((1, cout, 1, 1)), requires_grad=True) if bias else None
        self.stride, self.padding = stride, padding

    def __call__(self, x: Tensor, weight: Tensor | None = None) -> Tensor:
        y = conv2d(x, self.weight if weight is None else weight, self.stride, self.padding)
        return y + self.bias if self.bias is not None else y


class LSTMCell(Module):
    """Single LSTM cell with fused gate weights (input, forget, cell, output)."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.hidden_size = hidden_size
        bound = 1.0 / np.sqrt(hidden_size)
        self.w_x = Tensor(rng.uniform(-bound, bound, (input_size, 4 * hidden_size)), requires_grad=True)
        self.w_h = Tensor(rng.uniform(-bound, bound, (hidden_size, 4 * hidden_size)), requires_grad=True)
        b = np.zeros(4 * hidden_size, dtype=np.float32)
        b[hidden_size : 2 * hidden_size] = 1.0  # forget-gate bias
        self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        H = self.hidden_size
        z = x @ self.w_x + h @ self.w_h + self.bias
        i = z[:, :H].sigmoid()
        f = z[:, H : 2 * H].sigmoid()
        g = z[:, 2 * H : 3 * H].tanh()
        o = z[:, 3 * H :].sigmoid()
        c_new = f * c + i * g
        h_new = o * c_new.tanh()
        return h_new, c_new


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr: float
    weight_decay: float = 0.0
    name: str = ""


class SGD:
    """Momentum SGD with per-group (lr, weight decay) and step decay."""

    def __init__(self, groups: list[ParamGroup], momentum: float = 0.9):
        self.groups = groups
        self.momentum = momentum
        self.base_lr = [g.lr for g in groups]
        self.velocity: dict[int, np.ndarray] = {}

    def step(self) -> None:
        for group in self.groups:
            for p in group.params:
                if p.grad is None:
                    continue
                g = p.grad
                if group.weight_decay:
                    g = g + group.weight_decay * p.data
                v = self.velocity.get(id(p))
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[id(p)] = v
                p.data -= (group.lr * v).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.grad = None

    def set_epoch(self, epoch: int, step_size: int, gamma: float = 0.1) -> None:
        factor = gamma ** (epoch // step_size) if step_size > 0 else 1.0
        for group, lr in zip(self.groups, self.base_lr):
            group.lr = lr * factor

    def state(self) -> list[list[np.ndarray | None]]:
        return [[self.velocity.get(id(p)) for p in g.params] for g in self.groups]

    def load_state(self, state) -> None:
        for group, vs in zip(self.groups, state):
            for p, v in zip(group.params, vs):
                if v is not None:
                    self.velocity[id(p)] = v.copy()


class Adam(SGD):
    """Adam with L2 decay added to the gradient; same group interface as SGD.

    Per-parameter state is the stacked (m, v) pair; ``steps`` counts updates
    for bias correction.
    """

    def __init__(self, groups: list[ParamGroup], betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(groups, momentum=0.0)
        self.betas, self.eps = betas, eps
        self.steps = 0

    def step(self) -> None:
        b1, b2 = self.betas
        self.steps += 1
        c1, c2 = 1 - b1**self.steps, 1 - b2**self.steps
        for group in self.groups:
            for p in group.params:
                if p.grad is None:
                    continue
                g = p.grad.astype(np.float64)
                if group.weight_decay:
                    g = g + group.weight_decay * p.data
                mv = self.velocity.get(id(p))
                if mv is None:
                    mv = np.zeros((2,) + g.shape)
                mv[0] = b1 * mv[0] + (1 - b1) * g
                mv[1] = b2 * mv[1] + (1 - b2) * g * g
                self.velocity[id(p)] = mv
                upd = (mv[0] / c1) / (np.sqrt(mv[1] / c2) + self.eps)
                p.data -= (group.lr * upd).astype(p.data.dtype)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                          training=training, momentum=self.momentum, eps=self.eps)
