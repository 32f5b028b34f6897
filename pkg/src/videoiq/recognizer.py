"""Any-precision per-frame classifier with TSN-style video consensus."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quant
from .cost import LayerSpec
from .nn import BatchNorm, Conv2d, Linear, Module
from .quant import FULL_PRECISION, AnyPrecisionWeightStore, PrecisionError
from .tensor import Tensor, no_grad, softmax


@dataclass(frozen=True)
class RecognizerConfig:
    num_classes: int = 4
    in_channels: int = 1
    input_size: int = 32
    widths: tuple[int, ...] = (8, 16, 32, 32)
    strides: tuple[int, ...] = (2, 2, 2, 1)
    precisions: tuple[int, ...] = (32, 4, 2)
    code_bits: int = quant.CODE_BITS
    alpha_init: float = 4.0

    def __post_init__(self):
        if len(self.widths) != len(self.strides) or len(self.widths) < 2:
            raise ValueError("need at least two conv blocks with matching strides")
        if 0 in self.precisions:
            raise ValueError("recognizer precisions exclude the skip action")


def _key(b: int) -> str:
    return f"b{b}"


class RecognitionNet(Module):
    """conv-BN-act blocks, global average pool, linear head.

    The first conv and the head always run at full precision. Every other
    conv weight is shared across precisions; batch-norm layers and PACT clip
    values are kept in one bank per precision.
    """

    def __init__(self, config: RecognizerConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        cin = config.in_channels
        self.convs = []
        for w, s in zip(config.widths, config.strides):
            self.convs.append(Conv2d(cin, w, 3, rng, stride=s, padding=1))
            cin = w
        self.bn = {_key(b): [BatchNorm(w) for w in config.widths] for b in config.precisions}
        self.alpha = {
            _key(b): [Tensor(np.float32(config.alpha_init), requires_grad=True) for _ in config.widths]
            for b in config.precisions
        }
        self.head = Linear(cin, config.num_classes, rng)
        self._store: AnyPrecisionWeightStore | None = None

    # -- precision plumbing ------------------------------------------------
    @property
    def precisions(self) -> tuple[int, ...]:
        return self.config.precisions

    @property
    def quantized_layers(self) -> list[int]:
        return list(range(1, len(self.convs)))

    @property
    def inference_mode(self) -> bool:
        return self._store is not None

    def _check(self, b: int) -> None:
        if b == 0:
            raise PrecisionError("precision 0 (skip) is handled at the video level")
        if b not in self.precisions:
            raise PrecisionError(f"precision {b} not in {self.precisions}")

    def conv_weight(self, i: int, b: int) -> Tensor:
        """Weight of conv ``i`` at precision ``b``.

        In inference mode a quantized precision reads the frozen code store
        only; the full-precision tensor is not touched.
        """
        if i == 0 or b == FULL_PRECISION:
            return self.convs[i].weight
        if self._store is not None:
            return Tensor(self._store.truncate_precision(f"conv{i}", b))
        return quant.quantize_weight(self.convs[i].weight, b, self.config.code_bits)

    def build_store(self) -> AnyPrecisionWeightStore:
        weights = {f"conv{i}": self.convs[i].weight.data for i in self.quantized_layers}
        quantized = [b for b in self.precisions if b != FULL_PRECISION]
        return AnyPrecisionWeightStore.build(weights, quantized, self.config.code_bits)

    def freeze_store(self, store: AnyPrecisionWeightStore | None = None) -> AnyPrecisionWeightStore:
        """Switch to inference mode backed by ``store`` (built from live weights if omitted)."""
        self._store = store if store is not None else self.build_store()
        return self._store

    def thaw(self) -> None:
        self._store = None

    @property
    def store(self) -> AnyPrecisionWeightStore | None:
        return self._store

    # -- forward ----------------------------------------------------------
    def forward_frames(self, x: Tensor, b: int, training: bool = False) -> Tensor:
        """Logits (N, m) for a batch of frames (N, C, H, W) at precision ``b``."""
        self._check(b)
        bank, alphas = self.bn[_key(b)], self.alpha[_key(b)]
        last = len(self.convs) - 1
        h = x
        for i, conv in enumerate(self.convs):
            h = conv(h, self.conv_weight(i, b))
            h = bank[i](h, training=training)
            # the last activation feeds the full-precision head
            h = quant.pact_quantize(h, alphas[i], None if i == last else b)
        h = h.mean(axis=(2, 3))
        return self.head(h)

    def frame_probs(self, frames: np.ndarray, b: int, batch: int = 256) -> np.ndarray:
        """Softmax probabilities for frames of any leading shape ``(..., C, H, W)``."""
        lead = frames.shape[:-3]
        flat = frames.reshape((-1,) + frames.shape[-3:])
        out = []
        with no_grad():
            for s in range(0, len(flat), batch):
                out.append(softmax(self.forward_frames(Tensor(flat[s : s + batch]), b)).data)
        m = self.config.num_classes
        return np.concatenate(out).reshape(lead + (m,)) if out else np.zeros(lead + (m,), np.float32)

    def layer_specs(self) -> list[LayerSpec]:
        c = self.config
        specs, cin, hw = [], c.in_channels, c.input_size
        for i, (w, s) in enumerate(zip(c.widths, c.strides)):
            hw = (hw + 2 - 3) // s + 1
            specs += [
                LayerSpec("conv2d", cin, w, (3, 3), (hw, hw), quantizable=i > 0, name=f"conv{i}"),
                LayerSpec("batchnorm", w, w, out_hw=(hw, hw), name=f"bn{i}"),
                LayerSpec("activation", w, w, out_hw=(hw, hw), name=f"act{i}"),
            ]
            cin = w
        specs.append(LayerSpec("pool", cin, cin, out_hw=(1, 1), name="pool"))
        specs.append(LayerSpec("linear", cin, c.num_classes, quantizable=False, bias=True, name="head"))
        return specs


def forward_frame(net: RecognitionNet, frame: np.ndarray, b: int) -> np.ndarray:
    """Logits (m,) for one frame (C, H, W)."""
    with no_grad():
        return net.forward_frames(Tensor(np.asarray(frame)[None]), b).data[0]


def mix_frame_predictions(frame_probs: np.ndarray, weights: Tensor | np.ndarray) -> Tensor:
    """Video probabilities from per-frame, per-precision probabilities.

    ``frame_probs`` is (N, T, K, m) for the K recognizer precisions;
    ``weights`` is (N, T, K + 1) over the action space with skip last. The
    result averages the selected frames' predictions; skipped frames drop out
    and a video with every frame skipped gets the uniform distribution.
    """
    weights = weights if isinstance(weights, Tensor) else Tensor(np.asarray(weights, dtype=np.float32))
    n, t, k, m = frame_probs.shape
    if weights.shape != (n, t, k + 1):
        raise ValueError(f"weights shape {weights.shape} does not match {(n, t, k + 1)}")
    w = weights[:, :, :k].reshape(n, 1, t * k)
    p = Tensor(frame_probs.reshape(n, t * k, m).astype(weights.dtype))
    num = (w @ p).reshape(n, m)
    den = w.sum(axis=2)  # (n, 1)
    empty = (np.abs(den.data) < 1e-8).astype(weights.dtype)
    return (num + empty / m) / (den + empty)


def actions_to_onehot(actions: np.ndarray, action_space) -> np.ndarray:
    idx = np.vectorize(action_space.index)(np.asarray(actions))
    return np.eye(len(action_space.actions), dtype=np.float32)[idx]


def forward_videos(net: RecognitionNet, frames: np.ndarray, actions: np.ndarray, action_space) -> np.ndarray:
    """Video probabilities (N, m) executing only the chosen precision per frame.

    ``frames`` is (N, T, C, H, W); ``actions`` holds bit-widths from the
    action space, with 0 meaning skip.
    """
    n, t = actions.shape
    m = net.config.num_classes
    total = np.zeros((n, m), dtype=np.float64)
    count = np.zeros(n, dtype=np.int64)
    for b in net.precisions:
        sel = actions == b
        if sel.any():
            probs = net.frame_probs(frames[sel], b)
            np.add.at(total, np.nonzero(sel)[0], probs)
            count += sel.sum(axis=1)
    out = np.full((n, m), 1.0 / m)
    nz = count > 0
    out[nz] = total[nz] / count[nz, None]
    return out


def forward_video(net: RecognitionNet, video: np.ndarray, actions, action_space) -> np.ndarray:
    return forward_videos(net, np.asarray(video)[None], np.asarray(actions)[None], action_space)[0]


def teacher_probs(teacher: RecognitionNet, frames: np.ndarray) -> np.ndarray:
    """Soft targets: full-precision frame probabilities averaged over frames."""
    return teacher.frame_probs(frames, FULL_PRECISION).mean(axis=-2)


teacher_logits = teacher_probs


def init_from_teacher(net: RecognitionNet, teacher: RecognitionNet) -> None:
    """Copy the teacher's weights and its full-precision bank into every bank."""
    for dst, src in zip(net.convs, teacher.convs):
        dst.weight.data[...] = src.weight.data
    net.head.weight.data[...] = teacher.head.weight.data
    net.head.bias.data[...] = teacher.head.bias.data
    src_bank, src_alpha = teacher.bn[_key(FULL_PRECISION)], teacher.alpha[_key(FULL_PRECISION)]
    for b in net.precisions:
        for dst, src in zip(net.bn[_key(b)], src_bank):
            dst.load_state_dict(src.state_dict())
        for dst, src in zip(net.alpha[_key(b)], src_alpha):
            dst.data[...] = src.data
