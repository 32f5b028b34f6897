"""Procedural toy videos with a known set of informative frames.

An informative frame carries an oriented grating whose angle encodes the
class; every other frame is smooth clutter plus noise. Some frames are
jittered copies of their predecessor, so a video is mostly redundant and only
a few frames say anything about the label. The informative mask lives in the
:class:`DatasetManifest`, which training code never sees.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"VIQD"
VERSION = 1


class DatasetFormatError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    frames: int = 8
    videos: int = 400
    frame_size: int = 32
    policy_size: int = 16
    informative_min: int = 3
    informative_max: int = 5
    redundancy: float = 0.3
    noise: float = 0.5
    amplitude: float = 0.2
    clutter: float = 0.5
    period: float = 8.0
    orientation_offset: float = 0.0
    dense: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.informative_min <= self.informative_max <= self.frames:
            raise ValueError("need 1 <= informative_min <= informative_max <= frames")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.frame_size <= 0 or self.policy_size <= 0:
            raise ValueError("resolutions must be positive")
        if self.frame_size % self.policy_size:
            raise ValueError("policy_size must divide frame_size")

    def split(self, videos: int, seed: int) -> "SyntheticSpec":
        return dataclasses.replace(self, videos=videos, seed=seed)

    def trimmed(self) -> "SyntheticSpec":
        """Dense-informative variant: most frames carry the class pattern."""
        return dataclasses.replace(self, informative_min=self.frames - 2, informative_max=self.frames, dense=True)


@dataclass
class VideoDataset:
    frames: np.ndarray  # (N, T, 1, H, W) float32
    labels: np.ndarray  # (N,) int64
    ids: list[str]
    num_classes: int
    policy_size: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def policy_frames(self) -> np.ndarray:
        return box_downsample(self.frames, self.frames.shape[-1] // self.policy_size)

    def subset(self, index) -> "VideoDataset":
        index = np.asarray(index)
        return VideoDataset(self.frames[index], self.labels[index], [self.ids[i] for i in index], self.num_classes, self.policy_size)


@dataclass
class DatasetManifest:
    split: str
    ids: list[str]
    labels: np.ndarray
    offsets: list[int]
    informative: np.ndarray  # (N, T) bool
    spec: dict = field(default_factory=dict)

    def mask_for(self, video_id: str) -> np.ndarray:
        return self.informative[self.ids.index(video_id)]


def box_downsample(frames: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return frames.copy()
    *lead, h, w = frames.shape
    return frames.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1)).astype(frames.dtype)


def _grating(rng, size, theta, period, amplitude):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    return amplitude * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)


def _clutter(rng, size, strength):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, size, 2)
        s = rng.uniform(size / 10, size / 4)
        img += rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return strength * img


def class_angle(spec: SyntheticSpec, label: int) -> float:
    return np.pi * label / spec.num_classes + spec.orientation_offset


def _video(spec: SyntheticSpec, label: int, rng: np.random.Generator):
    T, S = spec.frames, spec.frame_size
    k = int(rng.integers(spec.informative_min, spec.informative_max + 1))
    mask = np.zeros(T, dtype=bool)
    mask[rng.choice(T, size=k, replace=False)] = True
    frames = np.empty((T, S, S))
    theta = class_angle(spec, label)
    for i in range(T):
        if i > 0 and not mask[i] and rng.random() < spec.redundancy:
            shift = rng.integers(-1, 2, size=2)
            frames[i] = np.roll(frames[i - 1], tuple(shift), axis=(0, 1)) + spec.noise * rng.standard_normal((S, S))
            mask[i] = mask[i - 1]
            continue
        img = _clutter(rng, S, spec.clutter)
        if mask[i]:
            img += _grating(rng, S, theta, spec.period, spec.amplitude)
        frames[i] = img + spec.noise * rng.standard_normal((S, S))
    return frames.astype(np.float32)[:, None], mask


def generate_dataset(spec: SyntheticSpec, seed: int | None = None, split: str = "train"):
    """Build ``spec.videos`` videos; deterministic in (spec, seed)."""
    seed = spec.seed if seed is None else seed
    n = spec.videos
    labels = np.arange(n) % spec.num_classes
    np.random.default_rng(seed).shuffle(labels)
    frames = np.empty((n, spec.frames, 1, spec.frame_size, spec.frame_size), dtype=np.float32)
    informative = np.zeros((n, spec.frames), dtype=bool)
    for v in range(n):
        rng = np.random.default_rng([seed, v])
        frames[v], informative[v] = _video(spec, int(labels[v]), rng)
    ids = [f"{split}-{seed}-{v:05d}" for v in range(n)]
    data = VideoDataset(frames, labels.astype(np.int64), ids, spec.num_classes, spec.policy_size)
    frame_bytes = spec.frames * spec.frame_size * spec.frame_size * 4
    manifest = DatasetManifest(
        split=split, ids=list(ids), labels=data.labels.copy(),
        offsets=[v * frame_bytes for v in range(n)], informative=informative,
        spec=dataclasses.asdict(spec) | {"seed": seed},
    )
    return data, manifest


# ----------------------------------------------------------------------
# on-disk format
# ----------------------------------------------------------------------


def write_dataset(data: VideoDataset, path, manifest: DatasetManifest | None = None) -> None:
    """Binary frames file plus an adjacent ``.csv`` manifest."""
    path = Path(path)
    n = len(data)
    T, _, H, W = data.frames.shape[1:] if n else (0, 1, 0, 0)
    header = json.dumps(manifest.spec if manifest else {}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<IIIIII", n, T, H, W, data.num_classes, data.policy_size))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.asarray(data.labels, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(data.frames, dtype="<f4").tobytes())
    write_manifest(manifest or _bare_manifest(data), path.with_suffix(".csv"))


def _bare_manifest(data: VideoDataset) -> DatasetManifest:
    T = data.frames.shape[1] if len(data) else 0
    return DatasetManifest("unknown", list(data.ids), data.labels, [0] * len(data), np.zeros((len(data), T), bool))


def read_dataset(path) -> VideoDataset:
    path = Path(path)
    buf = path.read_bytes()
    pos = 0

    def take(n, name):
        nonlocal pos
        if pos + n > len(buf):
            raise DatasetFormatError(name, "file truncated")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise DatasetFormatError("magic", "not a VIQD dataset file")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != VERSION:
        raise DatasetFormatError("version", f"unsupported version {version}")
    n, T, H, W, m, psize = struct.unpack("<IIIIII", take(24, "header"))
    (hlen,) = struct.unpack("<I", take(4, "header"))
    take(hlen, "spec")
    labels = np.frombuffer(take(8 * n, "labels"), dtype="<i8").astype(np.int64)
    frames = np.frombuffer(take(4 * n * T * H * W, "frames"), dtype="<f4").astype(np.float32)
    frames = frames.reshape(n, T, 1, H, W)
    ids = [f"video-{i:05d}" for i in range(n)]
    man = path.with_suffix(".csv")
    if man.exists():
        rows = read_manifest(man)
        if len(rows.ids) == n:
            ids = rows.ids
    return VideoDataset(frames, labels, ids, m, psize)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "video_id", "label", "offset", "informative"])
        for i, vid in enumerate(manifest.ids):
            bits = "".join("1" if b else "0" for b in manifest.informative[i])
            w.writerow([manifest.split, vid, int(manifest.labels[i]), manifest.offsets[i], bits])


def read_manifest(path) -> DatasetManifest:
    ids, labels, offsets, masks, split = [], [], [], [], ""
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            split = row["split"]
            ids.append(row["video_id"])
            labels.append(int(row["label"]))
            offsets.append(int(row["offset"]))
            masks.append([c == "1" for c in row["informative"]])
    informative = np.array(masks, dtype=bool) if masks else np.zeros((0, 0), dtype=bool)
    return DatasetManifest(split, ids, np.array(labels, dtype=np.int64), offsets, informative)


# ----------------------------------------------------------------------
# oracle used to sanity-check the generator
# ----------------------------------------------------------------------


def spectrum_features(frames: np.ndarray) -> np.ndarray:
    """Phase-invariant features: centered |FFT| of each mean-removed frame."""
    f = frames.reshape(-1, frames.shape[-2], frames.shape[-1]).astype(np.float64)
    f = f - f.mean(axis=(1, 2), keepdims=True)
    mag = np.abs(np.fft.fft2(f))
    mag[:, 0, 0] = 0
    feats = mag.reshape(len(mag), -1)
    return feats / (np.linalg.norm(feats, axis=1, keepdims=True) + 1e-12)


class NearestCentroid:
    def fit(self, x: np.ndarray, y: np.ndarray, num_classes: int) -> "NearestCentroid":
        self.centroids = np.stack([x[y == k].mean(axis=0) for k in range(num_classes)])
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        d = ((x[:, None, :] - self.centroids[None]) ** 2).sum(-1)
        return d.argmin(axis=1)
