"""Training objectives for the recognizer (stage 1) and the policy (stage 2)."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, clip, softmax

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the efficiency, balance and entropy terms."""

    w1: float = 0.21
    w2: float = 0.5
    w3: float = 0.1

    def __post_init__(self):
        for name in ("w1", "w2", "w3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")


# Per-dataset policy-loss weights for the full-scale benchmarks.
DATASET_LOSS_WEIGHTS = {
    "activitynet": LossWeights(0.21, 0.5, 0.1),
    "fcvid": LossWeights(0.11, 1.0, 0.1),
    "mini-sports1m": LossWeights(0.21, 0.5, 0.1),
    "mini-kinetics": LossWeights(0.21, 0.3, 0.1),
}


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def ce_loss(video_probs, labels) -> Tensor:
    """Batch mean of -log p(label)."""
    p = _as_tensor(video_probs)
    labels = np.asarray(labels)
    picked = p[np.arange(len(labels)), labels]
    if np.any(picked.data < EPS):
        log.debug("ce_loss: clamping %d zero probabilities", int((picked.data < EPS).sum()))
    return -clip(picked, EPS, 1.0).log().mean()


def kd_loss(teacher_probs, student_probs) -> Tensor:
    """Batch mean of KL(teacher || student); the teacher is a constant."""
    yt = np.asarray(teacher_probs.data if isinstance(teacher_probs, Tensor) else teacher_probs)
    ys = _as_tensor(student_probs)
    yt = yt.astype(ys.dtype)
    safe_t = np.where(yt > 0, yt, 1.0)
    entropy_part = (yt * np.log(safe_t)).sum(axis=-1)  # sum y_t log y_t
    cross = (Tensor(yt, dtype=ys.dtype) * clip(ys, EPS, 1.0).log()).sum(axis=-1)
    return (Tensor(entropy_part, dtype=ys.dtype) - cross).mean()


def video_probs_uniform(net, frames: np.ndarray, b: int, training: bool) -> Tensor:
    """Average of frame softmaxes for every frame run at precision ``b``."""
    n, t = frames.shape[:2]
    logits = net.forward_frames(Tensor(frames.reshape((n * t,) + frames.shape[2:])), b, training=training)
    return softmax(logits, axis=-1).reshape(n, t, -1).mean(axis=1)


def anyprec_objective(net, teacher_probs, frames: np.ndarray, labels, precisions=None, training: bool = True,
                      use_kd: bool = True):
    """Sum over precisions of ce + kd, every precision seeing the same batch.

    Returns (total, {b: (ce, kd)}) with the per-term values as floats.
    """
    precisions = tuple(precisions or net.precisions)
    total = None
    terms = {}
    for b in precisions:
        probs = video_probs_uniform(net, frames, b, training)
        ce = ce_loss(probs, labels)
        loss = ce
        kd_val = 0.0
        if use_kd and teacher_probs is not None:
            kd = kd_loss(teacher_probs, probs)
            loss = loss + kd
            kd_val = kd.item()
        terms[b] = (ce.item(), kd_val)
        total = loss if total is None else total + loss
    return total, terms


def efficiency_loss(weights, costs) -> Tensor:
    """Expected per-video cost: sum over frames of sum_k p(k) cost(k), batch mean.

    ``weights`` is (N, T, K) soft decisions or one-hot hard decisions;
    ``costs`` the per-action cost in action order.
    """
    w = _as_tensor(weights)
    c = Tensor(np.asarray(costs, dtype=w.dtype))
    return (w * c).sum(axis=(1, 2)).mean()


def action_usage(weights) -> Tensor:
    """Fraction of frames assigned to each action over the batch."""
    w = _as_tensor(weights)
    return w.mean(axis=(0, 1))


def balance_loss(usage, squared: bool = False) -> Tensor:
    """Deviation of action usage from uniform, L1 by default."""
    u = _as_tensor(usage)
    dev = u - 1.0 / u.shape[-1]
    return (dev**2).sum() if squared else dev.abs().sum()


def entropy_loss(pi) -> Tensor:
    """Sum over frames of H(pi_t), batch mean. ``pi`` is (N, T, K)."""
    p = _as_tensor(pi)
    h = -(p * clip(p, EPS, 1.0).log()).sum(axis=-1)
    return h.sum(axis=-1).mean()


@dataclass
class PolicyLossTerms:
    ce: float
    kd: float
    efficiency: float
    balance: float
    entropy: float
    total: float


def policy_objective(video_probs: Tensor, labels, teacher_probs, decision_soft: Tensor, pi: Tensor, costs,
                     weights: LossWeights = LossWeights(), use_kd: bool = True, squared_balance: bool = False):
    """ce + kd + w1 * efficiency + w2 * balance + w3 * entropy.

    ``video_probs`` come from the recognizer outputs mixed by the sampled
    decisions; ``decision_soft`` is the relaxed sample (N, T, K) and ``pi``
    the policy distribution (N, T, K).
    """
    ce = ce_loss(video_probs, labels)
    kd = kd_loss(teacher_probs, video_probs) if use_kd else Tensor(np.float32(0.0))
    eff = efficiency_loss(decision_soft, costs)
    bal = balance_loss(action_usage(decision_soft), squared=squared_balance)
    ent = entropy_loss(pi)
    total = ce + kd + eff * weights.w1 + bal * weights.w2 + ent * weights.w3
    terms = PolicyLossTerms(ce.item(), kd.item(), eff.item(), bal.item(), ent.item(), total.item())
    return total, terms
