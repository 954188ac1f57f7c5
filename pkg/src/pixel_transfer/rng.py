"""Seeded random streams.

Every consumer draws from its own Philox (counter-based) generator keyed by
``SeedSequence([master_seed, stream_id])``. Stream ids are fixed, so adding a
consumer never perturbs the others.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64-10"

STREAMS = {
    "init/encoder": 1,
    "init/decoder": 2,
    "init/disc_rf": 3,
    "init/disc_da": 4,
    "selection": 10,
    "negatives": 11,
    "shuffle": 12,
    "split": 13,
    "synthetic": 14,
}


def stream(seed: int, purpose: str) -> np.random.Generator:
    if purpose not in STREAMS:
        raise KeyError(f"unknown random stream {purpose!r}")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, STREAMS[purpose]])
    return np.random.Generator(np.random.Philox(ss))


def get_state(gen: np.random.Generator) -> dict:
    """JSON-friendly copy of a Philox generator state."""
    st = gen.bit_generator.state
    return {
        "counter": [int(v) for v in st["state"]["counter"]],
        "key": [int(v) for v in st["state"]["key"]],
        "buffer": [int(v) for v in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def set_state(gen: np.random.Generator, state: dict) -> None:
    gen.bit_generator.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array(state["counter"], dtype=np.uint64),
            "key": np.array(state["key"], dtype=np.uint64),
        },
        "buffer": np.array(state["buffer"], dtype=np.uint64),
        "buffer_pos": state["buffer_pos"],
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }
