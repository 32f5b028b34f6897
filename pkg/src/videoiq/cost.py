"""Analytic FLOPs and parameter-memory accounting.

One multiply-accumulate counts as one FLOP. A layer with ``m``-bit weights
and ``n``-bit activations costs ``m * n / 64`` of its full-precision cost
(capped at 1, and exactly 1 at 32/32), so 4/4 is a quarter and 2/2 a
sixteenth. Normalization, activation and pooling work is tracked in a
separate overhead bucket and never scaled.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

FULL_PRECISION = 32
MB = float(1 << 20)
COMPUTE_KINDS = ("conv2d", "linear", "recurrent-cell")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    out_hw: tuple[int, int] = (1, 1)
    quantizable: bool = True
    bias: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("conv2d", "linear", "batchnorm", "activation", "pool", "recurrent-cell"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        dims = (self.in_channels, self.out_channels, *self.kernel, *self.out_hw)
        if any(d <= 0 for d in dims):
            raise ValueError(f"non-positive dimension in {self}")


def layer_flops(spec: LayerSpec) -> float:
    kh, kw = spec.kernel
    h, w = spec.out_hw
    if spec.kind == "conv2d":
        return float(kh * kw * spec.in_channels * spec.out_channels * h * w)
    if spec.kind == "linear":
        return float(spec.in_channels * spec.out_channels)
    if spec.kind == "recurrent-cell":
        # four gates, input and hidden projections
        return float(4 * spec.out_channels * (spec.in_channels + spec.out_channels))
    return 0.0


def layer_overhead_flops(spec: LayerSpec) -> float:
    if spec.kind in ("batchnorm", "activation", "pool"):
        h, w = spec.out_hw
        return float(spec.out_channels * h * w)
    return 0.0


def layer_params(spec: LayerSpec) -> int:
    kh, kw = spec.kernel
    if spec.kind == "conv2d":
        return kh * kw * spec.in_channels * spec.out_channels + (spec.out_channels if spec.bias else 0)
    if spec.kind == "linear":
        return spec.in_channels * spec.out_channels + (spec.out_channels if spec.bias else 0)
    if spec.kind == "batchnorm":
        return 2 * spec.out_channels
    if spec.kind == "recurrent-cell":
        return 4 * spec.out_channels * (spec.in_channels + spec.out_channels + 1)
    return 0


def quantized_layer_flops(base_flops: float, m: int, n: int) -> float:
    """Cost of a layer with ``m``-bit weights and ``n``-bit activations."""
    return min(1.0, (m * n) / 64) * base_flops


def model_flops(arch: Sequence[LayerSpec], b: int, flops_per_mac: float = 1.0) -> float:
    total = 0.0
    for spec in arch:
        base = layer_flops(spec) * flops_per_mac
        total += quantized_layer_flops(base, b, b) if spec.quantizable else base
    return total


def model_overhead(arch: Sequence[LayerSpec]) -> float:
    return sum(layer_overhead_flops(s) for s in arch)


@dataclass
class CostTable:
    actions: tuple[int, ...]
    flops_per_frame: dict[int, float]
    policy_overhead_per_frame: float = 0.0
    overhead_per_frame: float = 0.0
    memory_bytes: dict[str, float] = field(default_factory=dict)

    def vector(self, scale: float = 1.0) -> list[float]:
        """Per-action cost in ``actions`` order, multiplied by ``scale``."""
        return [self.flops_per_frame[a] * scale for a in self.actions]

    def gflops(self, a: int) -> float:
        return self.flops_per_frame[a] / 1e9


def model_cost_table(
    arch: Sequence[LayerSpec],
    actions: Iterable[int] = (32, 4, 2, 0),
    policy_arch: Sequence[LayerSpec] | None = None,
    flops_per_mac: float = 1.0,
) -> CostTable:
    arch = list(arch)
    if not arch:
        raise ValueError("empty architecture")
    actions = tuple(actions)
    flops = {a: (0.0 if a == 0 else model_flops(arch, a, flops_per_mac)) for a in actions}
    policy = model_flops(policy_arch, FULL_PRECISION, flops_per_mac) if policy_arch else 0.0
    return CostTable(
        actions=actions,
        flops_per_frame=flops,
        policy_overhead_per_frame=policy,
        overhead_per_frame=model_overhead(arch),
    )


def memory_footprint(arch: Sequence[LayerSpec], bits: int) -> float:
    """Bytes to store parameters with quantizable layers at ``bits``."""
    total = 0.0
    for spec in arch:
        width = bits if spec.quantizable else FULL_PRECISION
        total += layer_params(spec) * width / 8
    return total


def any_precision_memory(
    arch: Sequence[LayerSpec],
    code_bits: int,
    precisions: Sequence[int] = (32, 4, 2),
    policy_arch: Sequence[LayerSpec] | None = None,
    n_clip_layers: int = 0,
) -> float:
    """Bytes for the deployed any-precision model.

    Quantizable conv/linear weights are counted once as full-precision
    weights (the 32-bit action) and once as ``code_bits`` codes; batch-norm
    parameters are replicated per precision; unquantized layers and the
    policy network are full precision.
    """
    total = 0.0
    for spec in arch:
        n = layer_params(spec)
        if spec.kind == "batchnorm":
            total += n * 4 * len(precisions)
        elif spec.quantizable and spec.kind in COMPUTE_KINDS:
            has_fp = FULL_PRECISION in precisions
            total += n * 4 * has_fp + n * code_bits / 8
        else:
            total += n * 4
    total += n_clip_layers * len(precisions) * 4
    if policy_arch:
        total += memory_footprint(policy_arch, FULL_PRECISION)
    return total


# ----------------------------------------------------------------------
# reference architectures
# ----------------------------------------------------------------------


def resnet18_arch(num_classes: int = 200, input_hw: int = 224, quantize_first_last: bool = False) -> list[LayerSpec]:
    """ResNet-18 layer list (basic blocks, no conv biases)."""
    layers: list[LayerSpec] = []
    hw = input_hw // 2
    layers.append(LayerSpec("conv2d", 3, 64, (7, 7), (hw, hw), quantize_first_last, name="conv1"))
    layers.append(LayerSpec("batchnorm", 64, 64, out_hw=(hw, hw), name="bn1"))
    layers.append(LayerSpec("activation", 64, 64, out_hw=(hw, hw), name="relu1"))
    hw //= 2
    layers.append(LayerSpec("pool", 64, 64, (3, 3), (hw, hw), name="maxpool"))
    cin = 64
    for stage, cout in enumerate((64, 128, 256, 512), start=1):
        for block in range(2):
            stride = 2 if (stage > 1 and block == 0) else 1
            if stride == 2:
                hw //= 2
            pre = f"layer{stage}.{block}"
            layers += [
                LayerSpec("conv2d", cin, cout, (3, 3), (hw, hw), name=f"{pre}.conv1"),
                LayerSpec("batchnorm", cout, cout, out_hw=(hw, hw), name=f"{pre}.bn1"),
                LayerSpec("activation", cout, cout, out_hw=(hw, hw), name=f"{pre}.relu1"),
                LayerSpec("conv2d", cout, cout, (3, 3), (hw, hw), name=f"{pre}.conv2"),
                LayerSpec("batchnorm", cout, cout, out_hw=(hw, hw), name=f"{pre}.bn2"),
            ]
            if stride == 2 or cin != cout:
                layers += [
                    LayerSpec("conv2d", cin, cout, (1, 1), (hw, hw), name=f"{pre}.downsample"),
                    LayerSpec("batchnorm", cout, cout, out_hw=(hw, hw), name=f"{pre}.downsample.bn"),
                ]
            layers.append(LayerSpec("activation", cout, cout, out_hw=(hw, hw), name=f"{pre}.relu2"))
            cin = cout
    layers.append(LayerSpec("pool", 512, 512, out_hw=(1, 1), name="avgpool"))
    layers.append(LayerSpec("linear", 512, num_classes, quantizable=quantize_first_last, bias=True, name="fc"))
    return layers


def all_quantizable(arch: Sequence[LayerSpec]) -> list[LayerSpec]:
    return [replace(s, quantizable=True) for s in arch]


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------


@dataclass
class CostReportRow:
    variant: str
    gflops_per_frame: float
    gflops_per_video: float
    ratio_to_fp: float
    memory_mb: float
    gflops_per_video_fp_ends: float


def cost_report(arch_table1: Sequence[LayerSpec], frames: int, bits: Sequence[int] = (32, 4, 2),
                arch_fp_ends: Sequence[LayerSpec] | None = None) -> list[CostReportRow]:
    """Uniform-precision rows: every layer scaled (``arch_table1``), plus a
    column where the first and last layers stay full precision."""
    fp = model_flops(arch_table1, FULL_PRECISION)
    rows = []
    for b in bits:
        f = model_flops(arch_table1, b)
        f_ends = model_flops(arch_fp_ends, b) if arch_fp_ends is not None else f
        rows.append(CostReportRow(
            variant=f"uniform-{b}",
            gflops_per_frame=f / 1e9,
            gflops_per_video=f * frames / 1e9,
            ratio_to_fp=f / fp,
            memory_mb=memory_footprint(arch_table1, b) / MB,
            gflops_per_video_fp_ends=f_ends * frames / 1e9,
        ))
    return rows


def format_cost_report(rows: Sequence[CostReportRow]) -> str:
    head = f"{'variant':<12}{'GFLOPs/frame':>14}{'GFLOPs/video':>14}{'ratio':>9}{'mem (MB)':>10}{'GFLOPs fp-ends':>16}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r.variant:<12}{r.gflops_per_frame:>14.3f}{r.gflops_per_video:>14.2f}{r.ratio_to_fp:>9.4f}"
            f"{r.memory_mb:>10.2f}{r.gflops_per_video_fp_ends:>16.2f}"
        )
    return "\n".join(lines)


def cost_report_csv(rows: Sequence[CostReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "gflops_per_frame", "gflops_per_video", "ratio_to_fp", "memory_mb", "gflops_per_video_fp_ends"])
    for r in rows:
        writer.writerow([r.variant, f"{r.gflops_per_frame:.6f}", f"{r.gflops_per_video:.6f}", f"{r.ratio_to_fp:.6f}",
                         f"{r.memory_mb:.6f}", f"{r.gflops_per_video_fp_ends:.6f}"])
    return buf.getvalue()
