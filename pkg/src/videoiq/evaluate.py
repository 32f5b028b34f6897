"""Evaluation: accuracy, mAP, hard GFLOPs, memory, policy analytics and transfer."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cost import MB, CostTable, any_precision_memory, memory_footprint, model_cost_table
from .data import DatasetManifest, VideoDataset
from .policy import ActionSpace, PolicyConfig, PolicyNet, infer_action
from .recognizer import RecognitionNet
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

MODES = ("learned", "uniform-32", "uniform-4", "uniform-2", "random", "ensemble")
ENSEMBLE_ACTION = -1  # trace marker: every precision was run on the frame


class EvalError(ValueError):
    pass


@dataclass
class VideoTrace:
    video_id: str
    actions: np.ndarray  # (T,) bit-width per frame, 0 = skip
    correct: np.ndarray  # (T,) 1/0, -1 where the frame was skipped
    informative: np.ndarray | None = None


@dataclass
class EvalReport:
    mode: str
    top1: float  # percent
    map: float  # percent
    gflops_per_video: float  # recognizer + policy overhead
    recognizer_gflops_per_video: float
    policy_gflops_per_video: float
    memory_mb: float
    usage: dict[int, float]
    traces: list[VideoTrace] = field(default_factory=list)
    video_probs: np.ndarray | None = None
    labels: np.ndarray | None = None
    frames: int = 0
    flops_per_frame: dict[int, float] = field(default_factory=dict)

    def check(self) -> None:
        """Raise if a report invariant does not hold."""
        total = sum(self.usage.values())
        if abs(total - 1.0) > 1e-9:
            raise EvalError(f"usage fractions sum to {total}")
        if self.mode != "ensemble":
            hi = self.policy_gflops_per_video + self.frames * self.flops_per_frame.get(32, 0.0) / 1e9
            lo = self.policy_gflops_per_video
            if not lo - 1e-12 <= self.gflops_per_video <= hi + 1e-12:
                raise EvalError(f"GFLOPs/video {self.gflops_per_video} outside [{lo}, {hi}]")

    def summary(self) -> str:
        use = " ".join(f"{a}:{f:.3f}" for a, f in self.usage.items())
        return (f"{self.mode:<11} top1 {self.top1:6.2f}%  mAP {self.map:6.2f}%  "
                f"GFLOPs/video {self.gflops_per_video:.6f} (recognizer {self.recognizer_gflops_per_video:.6f})  "
                f"memory {self.memory_mb:.4f} MB  usage {use}")

    def row(self) -> dict:
        out = {"mode": self.mode, "top1": self.top1, "map": self.map, "gflops_per_video": self.gflops_per_video,
               "recognizer_gflops_per_video": self.recognizer_gflops_per_video,
               "policy_gflops_per_video": self.policy_gflops_per_video, "memory_mb": self.memory_mb}
        out.update({f"usage_{a}": f for a, f in self.usage.items()})
        return out


def reports_csv(reports) -> str:
    rows = [r.row() for r in reports]
    keys = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    w = csv.DictWriter(buf, keys, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def mean_average_precision(scores, labels) -> float:
    """Macro mean over classes of the average precision of each ranked score column, in percent."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    aps = []
    for c in range(scores.shape[1]):
        pos = labels == c
        if not pos.any():
            log.info("mAP: class %d has no positives, excluded", c)
            continue
        order = np.argsort(-scores[:, c], kind="stable")
        hits = pos[order]
        ranks = np.nonzero(hits)[0] + 1
        aps.append(np.mean(np.arange(1, len(ranks) + 1) / ranks))
    return 100.0 * float(np.mean(aps)) if aps else float("nan")


def _policy_for_cost(policy: PolicyNet | None, data: VideoDataset, actions: ActionSpace) -> PolicyNet:
    if policy is not None:
        return policy
    return PolicyNet(PolicyConfig(input_size=data.policy_size, num_actions=len(actions)))


def cost_table_for(recognizer: RecognitionNet, policy: PolicyNet, actions: ActionSpace) -> CostTable:
    return model_cost_table(recognizer.layer_specs(), actions.actions, policy.layer_specs())


def policy_actions(policy: PolicyNet, data: VideoDataset, actions: ActionSpace, batch: int = 64) -> np.ndarray:
    """Deterministic per-frame bit-widths (N, T) from the policy's argmax."""
    pf = data.policy_frames
    out = []
    with no_grad():
        for s in range(0, len(pf), batch):
            pi, _ = policy.rollout(Tensor(pf[s : s + batch]))
            out.append(infer_action(pi.data))
    idx = np.concatenate(out) if out else np.zeros((0, data.frames.shape[1]), dtype=np.int64)
    return np.asarray(actions.actions)[idx]


def execute(recognizer: RecognitionNet, frames: np.ndarray, bits: np.ndarray):
    """Run each frame at its bit-width; returns (video probs (N, m), frame predictions (N, T), -1 if skipped)."""
    n, t = bits.shape
    m = recognizer.config.num_classes
    total = np.zeros((n, m))
    count = np.zeros(n, dtype=np.int64)
    pred = np.full((n, t), -1, dtype=np.int64)
    for b in recognizer.precisions:
        sel = bits == b
        if not sel.any():
            continue
        probs = recognizer.frame_probs(frames[sel], b)
        np.add.at(total, np.nonzero(sel)[0], probs)
        count += sel.sum(axis=1)
        pred[sel] = probs.argmax(axis=-1)
    video = np.full((n, m), 1.0 / m)
    nz = count > 0
    video[nz] = total[nz] / count[nz, None]
    return video, pred


def evaluate(policy: PolicyNet | None, recognizer: RecognitionNet, data: VideoDataset, mode: str,
             actions: ActionSpace = ActionSpace(), manifest: DatasetManifest | None = None, seed: int = 0,
             random_probs=None) -> EvalReport:
    """Evaluate one execution mode on ``data``.

    ``random`` samples each frame's action from ``random_probs`` (uniform
    over the action space by default) with a generator seeded by ``seed``.
    """
    if mode not in MODES:
        raise EvalError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    n, t = data.frames.shape[:2]
    if mode == "learned":
        if policy is None:
            raise EvalError("learned mode needs a policy")
        bits = policy_actions(policy, data, actions)
    elif mode.startswith("uniform-"):
        b = int(mode.split("-")[1])
        if b not in recognizer.precisions:
            raise EvalError(f"recognizer has no {b}-bit precision")
        bits = np.full((n, t), b, dtype=np.int64)
    elif mode == "random":
        p = np.full(len(actions), 1.0 / len(actions)) if random_probs is None else np.asarray(random_probs, float)
        if p.shape != (len(actions),) or np.any(p < 0):
            raise EvalError("random_probs must be a distribution over the action space")
        rng = np.random.default_rng(seed)
        bits = np.asarray(actions.actions)[rng.choice(len(actions), size=(n, t), p=p / p.sum())]
    else:
        bits = np.full((n, t), ENSEMBLE_ACTION, dtype=np.int64)

    cost_policy = _policy_for_cost(policy, data, actions)
    table = cost_table_for(recognizer, cost_policy, actions)
    arch = recognizer.layer_specs()

    if mode == "ensemble":
        probs = np.stack([recognizer.frame_probs(data.frames, b) for b in recognizer.precisions], axis=2)
        video = probs.mean(axis=(1, 2))
        pred = probs.mean(axis=2).argmax(axis=-1)
        rec_flops = n * t * sum(table.flops_per_frame[b] for b in recognizer.precisions)
        usage = {b: 1.0 / len(recognizer.precisions) for b in recognizer.precisions}
        memory = sum(memory_footprint(arch, b) for b in recognizer.precisions)
    else:
        video, pred = execute(recognizer, data.frames, bits)
        rec_flops = float(sum(table.flops_per_frame[int(a)] * int((bits == a).sum()) for a in actions.actions))
        usage = {a: float((bits == a).mean()) for a in actions.actions}
        if mode.startswith("uniform-"):
            memory = memory_footprint(arch, int(mode.split("-")[1]))
        else:
            n_clip = len(recognizer.config.widths)
            memory = any_precision_memory(arch, recognizer.config.code_bits, recognizer.precisions,
                                          cost_policy.layer_specs(), n_clip)
    policy_flops = n * t * table.policy_overhead_per_frame

    labels = data.labels
    correct = np.where(pred >= 0, (pred == labels[:, None]).astype(np.int64), -1)
    informative = manifest.informative if manifest is not None else None
    traces = [
        VideoTrace(data.ids[v], bits[v].copy(), correct[v],
                   informative[v].copy() if informative is not None else None)
        for v in range(n)
    ]
    denom = max(n, 1)
    report = EvalReport(
        mode=mode,
        top1=100.0 * float((video.argmax(axis=-1) == labels).mean()) if n else float("nan"),
        map=mean_average_precision(video, labels) if n else float("nan"),
        gflops_per_video=(rec_flops + policy_flops) / denom / 1e9,
        recognizer_gflops_per_video=rec_flops / denom / 1e9,
        policy_gflops_per_video=policy_flops / denom / 1e9,
        memory_mb=memory / MB,
        usage=usage,
        traces=traces,
        video_probs=video,
        labels=labels,
        frames=t,
        flops_per_frame=dict(table.flops_per_frame),
    )
    return report


# ----------------------------------------------------------------------
# policy analytics
# ----------------------------------------------------------------------


@dataclass
class Histogram:
    actions: tuple[int, ...]
    fractions: tuple[float, ...]

    def text(self, width: int = 40) -> str:
        lines = []
        for a, f in zip(self.actions, self.fractions):
            label = "skip" if a == 0 else f"{a}-bit"
            lines.append(f"{label:>7} |{'#' * int(round(f * width)):<{width}}| {100 * f:5.1f}%")
        return "\n".join(lines)

    def csv(self) -> str:
        return "action,fraction\n" + "".join(f"{a},{f:.6f}\n" for a, f in zip(self.actions, self.fractions))


def policy_histogram(report: EvalReport) -> Histogram:
    """Per-action fraction over every frame of every trace."""
    if report.mode == "ensemble" or not report.traces:
        acts = tuple(report.usage)
        return Histogram(acts, tuple(report.usage[a] for a in acts))
    acts = tuple(report.usage)
    allbits = np.concatenate([tr.actions for tr in report.traces])
    return Histogram(acts, tuple(float((allbits == a).mean()) for a in acts))


TRACE_COLUMNS = ("video_id", "frame_idx", "action", "informative", "correct")


def trace_rows(report: EvalReport, manifest: DatasetManifest | None = None):
    for tr in report.traces:
        mask = tr.informative
        if mask is None and manifest is not None:
            mask = manifest.mask_for(tr.video_id)
        for i, a in enumerate(tr.actions):
            yield {
                "video_id": tr.video_id,
                "frame_idx": i,
                "action": int(a),
                "informative": "" if mask is None else int(bool(mask[i])),
                "correct": "" if tr.correct[i] < 0 else int(tr.correct[i]),
            }


def dump_traces(report: EvalReport, path, manifest: DatasetManifest | None = None) -> int:
    """Write the per-frame trace CSV; returns the number of rows."""
    rows = list(trace_rows(report, manifest))
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return len(rows)


def read_traces(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))


def gflops_from_traces(rows, flops_per_frame: dict[int, float], policy_overhead_per_frame: float) -> float:
    """Mean GFLOPs/video recomputed from trace rows alone."""
    videos = {}
    for r in rows:
        a = int(r["action"])
        videos[r["video_id"]] = videos.get(r["video_id"], 0.0) + flops_per_frame.get(a, 0.0) + policy_overhead_per_frame
    return sum(videos.values()) / max(len(videos), 1) / 1e9


def informative_alignment(report: EvalReport, action: int = 32) -> tuple[float, float]:
    """(P(action | informative frame), P(action | uninformative frame))."""
    acts = np.concatenate([tr.actions for tr in report.traces])
    masks = [tr.informative for tr in report.traces]
    if any(m is None for m in masks):
        raise EvalError("report has no informative masks; pass the manifest to evaluate")
    mask = np.concatenate(masks).astype(bool)
    p_inf = float((acts[mask] == action).mean()) if mask.any() else float("nan")
    p_un = float((acts[~mask] == action).mean()) if (~mask).any() else float("nan")
    return p_inf, p_un


def cross_policy_eval(policy: PolicyNet, recognizer: RecognitionNet, data: VideoDataset,
                      actions: ActionSpace = ActionSpace(), manifest: DatasetManifest | None = None) -> EvalReport:
    """Run a policy trained elsewhere with this dataset's recognizer."""
    if policy.config.input_size != data.policy_size:
        raise EvalError(f"policy resolution {policy.config.input_size} != dataset {data.policy_size}")
    if recognizer.config.input_size != data.frames.shape[-1]:
        raise EvalError(f"recognizer resolution {recognizer.config.input_size} != dataset {data.frames.shape[-1]}")
    if policy.config.num_actions != len(actions):
        raise EvalError("policy action count does not match the action space")
    return evaluate(policy, recognizer, data, "learned", actions, manifest)
