"""Counter-based random streams for reproducible decoding.

Every random draw in the engine is a pure function of (seed, stream, index),
realized with the Philox counter-based generator.  This keeps the main-stream
token sampling and the suppression Bernoulli decisions on independent streams:
consuming a draw on one stream never perturbs the other, and replaying a run
with the same seed reproduces every decision bit for bit.
"""

from __future__ import annotations

import numpy as np

# Stream tags.  Distinct tags give statistically independent substreams of the
# same run seed.
SAMPLING_STREAM = 1
DECISION_STREAM = 2

_MASK64 = (1 << 64) - 1


def stream_uniform(seed: int, stream: int, index: int) -> float:
    """Return the uniform [0, 1) variate at a fixed stream position.

    Pure function: the same (seed, stream, index) triple always yields the
    same value, regardless of any other draws made elsewhere.
    """
    if index < 0:
        raise ValueError(f"stream index must be nonnegative, got {index}")
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    counter = np.array([index & _MASK64, 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter)).random()


def sampling_uniform(seed: int, step: int) -> float:
    """Uniform variate used to select the token at generation step ``step``."""
    return stream_uniform(seed, SAMPLING_STREAM, step)


def decision_uniform(seed: int, position: int) -> float:
    """Uniform variate behind the suppression Bernoulli draw at ``position``."""
    return stream_uniform(seed, DECISION_STREAM, position)


def derive_seed(seed: int, index: int) -> int:
    """Derive a per-problem run seed from a base seed and a stable index."""
    # SplitMix64-style mix; keeps per-problem streams decorrelated.
    z = (seed ^ (index * 0x9E3779B97F4A7C15)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64
