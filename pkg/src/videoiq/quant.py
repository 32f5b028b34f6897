"""Weight (DoReFa + bit truncation) and activation (PACT) quantization.

Weights are normalized with ``tanh`` into [0, 1], rounded to ``code_bits``
integer codes, and lower precisions are obtained by dropping least
significant bits. A per-layer scalar offset re-aligns the mean of each
truncated tensor with the widest one.

Rounding is half-away-from-zero everywhere.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .tensor import _OPS, Node, Tensor, apply, register, round_half_away

FULL_PRECISION = 32
CODE_BITS = 8


class DegenerateWeightError(ValueError):
    pass


class PrecisionError(ValueError):
    pass


def levels(b: int) -> int:
    return (1 << b) - 1


def quantize_level(x, b: int):
    """Round ``x`` in [0, 1] onto the uniform ``b``-bit grid ``k / (2^b - 1)``."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
        raise ValueError("quantize_level expects values in [0, 1]")
    n = levels(b)
    out = round_half_away(n * arr) / n
    return float(out) if np.ndim(x) == 0 else out


# ----------------------------------------------------------------------
# weights
# ----------------------------------------------------------------------


def normalize_weight(w: Tensor) -> Tensor:
    """tanh(W) / (2 max|tanh W|) + 1/2, differentiable."""
    t = w.tanh()
    m = t.abs().max()
    if float(m.data) == 0.0:
        raise DegenerateWeightError("degenerate weight tensor: max|tanh(W)| is 0")
    return t / (m * 2.0) + 0.5


def codes_from_unit(u: np.ndarray, code_bits: int = CODE_BITS) -> np.ndarray:
    # float64 keeps the round() identical for the live and frozen paths
    return round_half_away(np.asarray(u, dtype=np.float64) * levels(code_bits)).astype(np.int64)


def truncate_codes(codes: np.ndarray, code_bits: int, b: int) -> np.ndarray:
    if b > code_bits:
        raise PrecisionError(f"cannot truncate {code_bits}-bit codes to {b} bits")
    return np.right_shift(np.asarray(codes, dtype=np.int64), code_bits - b)


def dequantize(codes: np.ndarray, b: int) -> np.ndarray:
    return 2.0 * np.asarray(codes, dtype=np.float64) / levels(b) - 1.0


@register("truncate_ste", surrogate=True)
class _TruncateSTE:
    """u in [0,1] -> (codes >> (code_bits - b)) / (2^b - 1); identity gradient."""

    def forward(ctx, u, code_bits, bits):
        codes = truncate_codes(codes_from_unit(u, code_bits), code_bits, bits)
        ctx["codes"] = codes
        return (codes / levels(bits)).astype(u.dtype)

    def backward(ctx, g):
        return (g,)


def dorefa_quantize(w: Tensor, code_bits: int = CODE_BITS):
    """Quantize ``w`` to ``code_bits``: returns (codes, norm_scale, W_hat).

    ``W_hat`` is on the graph with a straight-through surrogate for rounding.
    """
    if w.size == 0:
        raise ValueError("empty weight tensor")
    if code_bits < 2:
        raise PrecisionError("code_bits must be >= 2")
    u = normalize_weight(w)
    q = apply("truncate_ste", u, code_bits=code_bits, bits=code_bits)
    w_hat = q * 2.0 - 1.0
    scale = float(np.max(np.abs(np.tanh(w.data))))
    return codes_from_unit(u.data, code_bits), scale, w_hat


def quantize_weight(w: Tensor, b: int, code_bits: int = CODE_BITS) -> Tensor:
    """Live training path: quantize to ``code_bits``, truncate to ``b``, re-align the mean."""
    u = normalize_weight(w)
    q = apply("truncate_ste", u, code_bits=code_bits, bits=b)
    w_hat = q * 2.0 - 1.0
    if b == code_bits:
        return w_hat
    codes = codes_from_unit(u.data, code_bits)
    offset = mean_offset(codes, code_bits, b)
    return w_hat + np.asarray(offset, dtype=w.dtype)


def mean_offset(codes: np.ndarray, code_bits: int, b: int) -> float:
    return float(dequantize(codes, code_bits).mean() - dequantize(truncate_codes(codes, code_bits, b), b).mean())


@dataclass(frozen=True)
class LayerCodes:
    """Frozen integer codes for one layer plus what is needed to dequantize them."""

    shape: tuple[int, ...]
    codes: np.ndarray
    code_bits: int
    norm_scale: float
    mean_offsets: Mapping[int, float]

    def weight(self, b: int) -> np.ndarray:
        if b == self.code_bits:
            return dequantize(self.codes, b).reshape(self.shape)
        if b not in self.mean_offsets:
            raise PrecisionError(f"precision {b} not in store (have {sorted(self.mean_offsets)})")
        w = dequantize(truncate_codes(self.codes, self.code_bits, b), b) + self.mean_offsets[b]
        return w.reshape(self.shape)


@dataclass(frozen=True)
class AnyPrecisionWeightStore:
    """Per-layer codes at the widest quantized width; lower widths by truncation.

    Nothing in here references full-precision weights: switching precision
    reads codes and offsets only.
    """

    layers: Mapping[str, LayerCodes]
    precisions: tuple[int, ...]
    code_bits: int = CODE_BITS
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def build(cls, weights: Mapping[str, np.ndarray], precisions=(4, 2), code_bits: int = CODE_BITS):
        precisions = tuple(int(b) for b in precisions if b != FULL_PRECISION)
        for b in precisions:
            if not 1 <= b <= code_bits:
                raise PrecisionError(f"precision {b} outside 1..{code_bits}")
        layers = {}
        for name, w in weights.items():
            u = normalize_weight(Tensor(np.asarray(w, dtype=np.float32))).data
            codes = codes_from_unit(u, code_bits)
            codes.setflags(write=False)
            offsets = {b: mean_offset(codes, code_bits, b) for b in precisions if b < code_bits}
            layers[name] = LayerCodes(
                shape=tuple(np.shape(w)),
                codes=codes,
                code_bits=code_bits,
                norm_scale=float(np.max(np.abs(np.tanh(np.asarray(w, dtype=np.float32))))),
                mean_offsets=MappingProxyType(offsets),
            )
        return cls(MappingProxyType(layers), precisions, code_bits)

    def truncate_precision(self, name: str, b: int) -> np.ndarray:
        if b not in self.precisions and b != self.code_bits:
            raise PrecisionError(f"precision {b} not in candidate set {self.precisions}")
        key = (name, b)
        if key not in self._cache:
            w = self.layers[name].weight(b).astype(np.float32)
            w.setflags(write=False)
            self._cache[key] = w
        return self._cache[key]

    # -- serialization -------------------------------------------------
    def to_bytes(self) -> bytes:
        out = [struct.pack("<BB", self.code_bits, len(self.precisions))]
        out.append(struct.pack(f"<{len(self.precisions)}B", *self.precisions))
        out.append(struct.pack("<I", len(self.layers)))
        for name, layer in self.layers.items():
            nb = name.encode()
            out.append(struct.pack("<H", len(nb)) + nb)
            out.append(struct.pack("<B", len(layer.shape)) + struct.pack(f"<{len(layer.shape)}I", *layer.shape))
            out.append(struct.pack("<Bf", layer.code_bits, layer.norm_scale))
            offs = sorted(layer.mean_offsets.items())
            out.append(struct.pack("<B", len(offs)))
            for b, off in offs:
                out.append(struct.pack("<Bd", b, off))
            packed = pack_codes(layer.codes, layer.code_bits)
            out.append(struct.pack("<I", len(packed)) + packed)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "AnyPrecisionWeightStore":
        pos = 0

        def take(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(buf):
                raise ValueError("weight store section truncated")
            vals = struct.unpack_from(fmt, buf, pos)
            pos += size
            return vals

        code_bits, n_prec = take("<BB")
        precisions = take(f"<{n_prec}B")
        (n_layers,) = take("<I")
        layers = {}
        for _ in range(n_layers):
            (nlen,) = take("<H")
            name = bytes(take(f"<{nlen}s")[0]).decode()
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I")
            lbits, scale = take("<Bf")
            (noff,) = take("<B")
            offsets = {}
            for _ in range(noff):
                b, off = take("<Bd")
                offsets[b] = off
            (plen,) = take("<I")
            packed = take(f"<{plen}s")[0]
            codes = unpack_codes(packed, lbits, int(np.prod(shape))).reshape(shape)
            codes.setflags(write=False)
            layers[name] = LayerCodes(tuple(shape), codes, lbits, float(scale), MappingProxyType(offsets))
        return cls(MappingProxyType(layers), tuple(precisions), code_bits)


def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    """Pack integer codes at ``bits`` bits each, little-endian bit order."""
    codes = np.asarray(codes, dtype=np.uint64).ravel()
    if codes.size and int(codes.max()) >= (1 << bits):
        raise ValueError(f"code does not fit in {bits} bits")
    shifts = np.arange(bits, dtype=np.uint64)
    bitmat = ((codes[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitmat.ravel(), bitorder="little").tobytes()


def unpack_codes(buf: bytes, bits: int, count: int) -> np.ndarray:
    flat = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")[: count * bits]
    if flat.size < count * bits:
        raise ValueError("packed code buffer too short")
    bitmat = flat.reshape(count, bits).astype(np.int64)
    return (bitmat << np.arange(bits, dtype=np.int64)).sum(axis=1)


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------


@register("pact", surrogate=True)
class _Pact:
    """alpha * quantize_b(clip(A, 0, alpha) / alpha).

    Surrogates: dA = 1 on (0, alpha); dalpha = 1 where A >= alpha.
    """

    def forward(ctx, a, alpha, bits):
        al = float(alpha)
        c = np.clip(a, 0.0, al)
        n = levels(bits)
        ctx["a"], ctx["alpha"] = a, al
        return (al * round_half_away(c / al * n) / n).astype(a.dtype)

    def backward(ctx, g):
        a, al = ctx["a"], ctx["alpha"]
        ga = g * ((a > 0) & (a < al))
        galpha = np.asarray((g * (a >= al)).sum())
        return ga, galpha


@register("pact_clip")
class _PactClip:
    """clip(A, 0, alpha) with its exact gradient; the full-precision path."""

    def forward(ctx, a, alpha):
        al = float(alpha)
        ctx["a"], ctx["alpha"] = a, al
        return np.clip(a, 0.0, al)

    def backward(ctx, g):
        a, al = ctx["a"], ctx["alpha"]
        return g * ((a > 0) & (a < al)), np.asarray((g * (a >= al)).sum())


def pact_quantize(a: Tensor, alpha: Tensor, b: int | None) -> Tensor:
    """PACT activation quantizer; ``b`` of None or 32 clips without rounding."""
    if float(alpha.data) <= 0:
        raise ValueError("clip value alpha must be positive")
    if b is None or b == FULL_PRECISION:
        return apply("pact_clip", a, alpha)
    if b < 1:
        raise PrecisionError("bit-width must be >= 1")
    return apply("pact", a, alpha, bits=b)


def project_clip(alpha: Tensor, minimum: float = 1e-3) -> None:
    """Keep a clip value strictly positive after an optimizer step."""
    np.maximum(alpha.data, minimum, out=alpha.data)


def ste_gradients(node: Node, grad_out: np.ndarray):
    """Surrogate gradients that backward uses for a recorded quantization node."""
    op = _OPS[node.op]
    if not op.surrogate:
        raise ValueError(f"{node.op} is not a surrogate-gradient op")
    return op.backward(node.ctx, np.asarray(grad_out))
