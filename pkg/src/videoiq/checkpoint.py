"""Versioned, sectioned checkpoint file.

Layout (little-endian)::

    "VIQ1" | u16 version | u32 section count
    per section: u16 name length | name | u64 payload length | u32 crc32 | payload

Array sections hold a JSON index (name, dtype, shape, offset) followed by
the raw array bytes, so the file is byte-identical for identical state.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .policy import ActionSpace, PolicyNet
from .quant import AnyPrecisionWeightStore
from .recognizer import RecognitionNet

MAGIC = b"VIQ1"
VERSION = 1
LOG_TAIL = 200


class CheckpointError(ValueError):
    pass


@dataclass
class PipelineState:
    config: TrainConfig
    teacher: RecognitionNet | None = None
    recognizer: RecognitionNet | None = None
    policy: PolicyNet | None = None
    actions: ActionSpace = ActionSpace()
    stage: str = ""
    epoch: int = 0
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict | None = None
    log: list[dict] = field(default_factory=list)


def pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    index, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        a = np.ascontiguousarray(a).reshape(a.shape)  # ascontiguousarray promotes 0-d to 1-d
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        raw = a.astype(dt, copy=False).tobytes()
        index.append([name, dt.str, list(a.shape), offset, len(raw)])
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(index).encode()
    return struct.pack("<I", len(head)) + head + b"".join(chunks)


def unpack_arrays(buf: bytes) -> dict[str, np.ndarray]:
    (n,) = struct.unpack_from("<I", buf, 0)
    index = json.loads(buf[4 : 4 + n].decode())
    base = 4 + n
    out = {}
    for name, dt, shape, offset, size in index:
        raw = buf[base + offset : base + offset + size]
        if len(raw) != size:
            raise CheckpointError(f"array {name!r} truncated")
        out[name] = np.frombuffer(raw, dtype=np.dtype(dt)).reshape(shape).copy()
    return out


def _split(state: dict[str, np.ndarray], prefix: str):
    return {k: v for k, v in state.items() if k.startswith(prefix)}


def save_checkpoint(path, state: PipelineState) -> None:
    meta = {
        "config": state.config.to_dict(),
        "stage": state.stage,
        "epoch": state.epoch,
        "actions": list(state.actions.actions),
        "has": {k: getattr(state, k) is not None for k in ("teacher", "recognizer", "policy")},
        "teacher_precisions": list(state.teacher.precisions) if state.teacher else None,
        "recognizer_precisions": list(state.recognizer.precisions) if state.recognizer else None,
        "store": bool(state.recognizer is not None and state.recognizer.store is not None),
    }
    sections: list[tuple[str, bytes]] = [("config", json.dumps(meta, sort_keys=True).encode())]
    if state.teacher is not None:
        sections.append(("teacher", pack_arrays(state.teacher.state_dict())))
    if state.recognizer is not None:
        sd = state.recognizer.state_dict()
        bn, clip = _split(sd, "bn."), _split(sd, "alpha.")
        rest = {k: v for k, v in sd.items() if k not in bn and k not in clip}
        if state.recognizer.store is not None:
            sections.append(("store", state.recognizer.store.to_bytes()))
        sections += [("bn", pack_arrays(bn)), ("clip", pack_arrays(clip)), ("fp", pack_arrays(rest))]
    if state.policy is not None:
        sections.append(("policy", pack_arrays(state.policy.state_dict())))
    sections.append(("optimizer", pack_arrays(state.optimizer)))
    sections.append(("rng", json.dumps(state.rng_state).encode()))
    sections.append(("log", json.dumps(state.log[-LOG_TAIL:]).encode()))

    out = [MAGIC, struct.pack("<HI", VERSION, len(sections))]
    for name, payload in sections:
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        out.append(payload)
    Path(path).write_bytes(b"".join(out))


def read_sections(path) -> dict[str, bytes]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 10:
        raise CheckpointError("truncated header")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos, sections = 10, {}
    for _ in range(count):
        if pos + 2 > len(buf):
            raise CheckpointError("truncated section header")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2 : pos + 2 + nlen].decode()
        pos += 2 + nlen
        if pos + 12 > len(buf):
            raise CheckpointError(f"truncated section {name!r}")
        size, crc = struct.unpack_from("<QI", buf, pos)
        pos += 12
        payload = buf[pos : pos + size]
        if len(payload) != size:
            raise CheckpointError(f"section {name!r} truncated")
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"section {name!r} failed CRC check")
        sections[name] = payload
        pos += size
    return sections


def load_checkpoint(path) -> PipelineState:
    sections = read_sections(path)
    meta = json.loads(sections["config"].decode())
    cfg = TrainConfig.from_dict(meta["config"])
    actions = ActionSpace(tuple(meta["actions"]))
    state = PipelineState(cfg, actions=actions, stage=meta["stage"], epoch=meta["epoch"])
    if "teacher" in sections:
        state.teacher = RecognitionNet(cfg.recognizer_config(tuple(meta["teacher_precisions"])), seed=cfg.seed)
        state.teacher.load_state_dict(unpack_arrays(sections["teacher"]))
        state.teacher.freeze()
    if "fp" in sections:
        net = RecognitionNet(cfg.recognizer_config(tuple(meta["recognizer_precisions"])), seed=cfg.seed)
        sd = {}
        for name in ("fp", "bn", "clip"):
            sd.update(unpack_arrays(sections[name]))
        net.load_state_dict(sd)
        net.freeze()
        if "store" in sections:
            net.freeze_store(AnyPrecisionWeightStore.from_bytes(sections["store"]))
        state.recognizer = net
    if "policy" in sections:
        state.policy = PolicyNet(cfg.policy_config(len(actions)), seed=cfg.seed + 17)
        state.policy.load_state_dict(unpack_arrays(sections["policy"]))
    state.optimizer = unpack_arrays(sections["optimizer"]) if "optimizer" in sections else {}
    state.rng_state = json.loads(sections["rng"].decode()) if "rng" in sections else None
    state.log = json.loads(sections["log"].decode()) if "log" in sections else []
    return state


def load_any_precision(path) -> RecognitionNet:
    state = load_checkpoint(path)
    if state.recognizer is None:
        raise CheckpointError("checkpoint has no recognizer section")
    return state.recognizer
