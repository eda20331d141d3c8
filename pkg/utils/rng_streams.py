"""
Named, splittable random streams.

Each (seed, stream name) pair maps to its own SeedSequence, so drawing more
numbers from one stream never shifts another, and trials spawned from a
stream are independent of scheduling order.
"""

from typing import Any, Dict, List

import numpy as np

STREAM_IDS: Dict[str, int] = {
    "init": 0,
    "data": 1,
    "eval": 2,
    "perturb": 3,
    "analysis": 4,
    "probe": 5,
}


def stream_seed(seed: int, name: str, *key: int) -> np.random.SeedSequence:
    """SeedSequence for (seed, stream); extra key values select independent sub-streams."""
    if name not in STREAM_IDS:
        raise KeyError(f"Unknown random stream '{name}'")
    return np.random.SeedSequence([int(seed), STREAM_IDS[name]] + [int(k) for k in key])


def make_rng(seed: int, name: str, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_seed(seed, name, *key)))


def make_streams(seed: int, *key: int) -> Dict[str, np.random.Generator]:
    """All named generators for one seed."""
    return {name: make_rng(seed, name, *key) for name in STREAM_IDS}


def spawn(rng: np.random.Generator, count: int) -> List[np.random.Generator]:
    """Independent child generators, one per trial, derived from rng's current state."""
    base = rng.integers(0, 2**63 - 1, dtype=np.int64)
    seq = np.random.SeedSequence(int(base))
    return [np.random.Generator(np.random.PCG64(child)) for child in seq.spawn(count)]


def export_states(streams: Dict[str, np.random.Generator]) -> Dict[str, Any]:
    return {name: rng.bit_generator.state for name, rng in streams.items()}


def restore_states(states: Dict[str, Any]) -> Dict[str, np.random.Generator]:
    streams = {}
    for name, state in states.items():
        bit_generator = np.random.PCG64()
        bit_generator.state = state
        streams[name] = np.random.Generator(bit_generator)
    return streams
