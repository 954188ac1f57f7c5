"""Binary checkpoint format.

Little-endian layout::

    b"PDTC"  u32 version
    u32 record count
    per record: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
                product(dims) x float32 values
    u32 metadata length, UTF-8 JSON metadata (sorted keys, compact)

Records hold network parameters (``<net>/<param>``), batch-norm running
statistics, and optimizer buffers (``opt/<net>/<buffer>/<param>``). The
metadata carries the training config, random stream states, epoch and step
counters, optimizer settings and batch-norm update counts.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .training import TrainingConfig, Trainer

MAGIC = b"PDTC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(records: dict[str, np.ndarray], metadata: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(records))]
    for name, arr in records.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype="<f4", order="C")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    return b"".join(parts)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", blob, 8)
    pos = 12
    records: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            records[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
        (mlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        metadata = json.loads(blob[pos : pos + mlen].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos + mlen != len(blob):
        raise CheckpointError("trailing bytes after checkpoint metadata")
    return records, metadata


def trainer_state(trainer: Trainer) -> tuple[dict[str, np.ndarray], dict]:
    records: dict[str, np.ndarray] = {}
    for net_id, net in trainer.networks.items():
        for key, arr in net.state_arrays().items():
            records[f"{net_id}/{key}"] = arr
    optim_meta = {}
    for name, opt in trainer.optimizers.items():
        for key, arr in opt.buffers().items():
            records[f"opt/{name}/{key}"] = arr
        optim_meta[name] = {"kind": opt.kind, "lr": opt.lr, "momentum": opt.momentum, "steps": opt.steps}
    metadata = {
        "format": "PDTC",
        "version": VERSION,
        "config": trainer.config.to_dict(),
        "rng": {
            "algorithm": rngmod.ALGORITHM,
            "seed": trainer.config.seed,
            "streams": {name: rngmod.get_state(g) for name, g in trainer.rngs.items()},
        },
        "epoch": trainer.epoch,
        "step": trainer.step_count,
        "optimizers": optim_meta,
        "bn_updates": {net_id: net.bn_updates() for net_id, net in trainer.networks.items()},
        "bn": {"eps": 1e-5, "momentum": 0.9},
        "bits": 8 * trainer.dtype.itemsize,
    }
    return records, metadata


def save_checkpoint(trainer: Trainer, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records, metadata = trainer_state(trainer)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(records, metadata))
    os.replace(tmp, path)
    return path


def load_checkpoint(path, dataset=None) -> Trainer:
    """Rebuild a trainer from a checkpoint; every declared shape is validated."""
    records, meta = decode(Path(path).read_bytes())
    config = TrainingConfig.from_dict(meta["config"])
    dtype = np.float64 if meta.get("bits", 32) == 64 else np.float32
    trainer = Trainer(config, dataset, dtype)
    for net_id, net in trainer.networks.items():
        prefix = f"{net_id}/"
        arrays = {k[len(prefix) :]: v for k, v in records.items() if k.startswith(prefix)}
        try:
            net.load_state_arrays(arrays)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(str(exc)) from exc
        net.set_bn_updates(meta["bn_updates"][net_id])
    for name, opt in trainer.optimizers.items():
        prefix = f"opt/{name}/"
        buffers = {k[len(prefix) :]: v for k, v in records.items() if k.startswith(prefix)}
        try:
            for key, current in opt.buffers().items():
                if buffers[key].shape != current.shape:
                    raise CheckpointError(f"opt/{name}/{key}: expected shape {current.shape}, got {buffers[key].shape}")
            opt.load_buffers(buffers)
        except KeyError as exc:
            raise CheckpointError(f"missing optimizer buffer {exc}") from exc
        om = meta["optimizers"][name]
        opt.lr, opt.steps = om["lr"], om["steps"]
    for name, state in meta["rng"]["streams"].items():
        rngmod.set_state(trainer.rngs[name], state)
    trainer.epoch = meta["epoch"]
    trainer.step_count = meta["step"]
    return trainer
