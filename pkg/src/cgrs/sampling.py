"""Seedable temperature / top-p sampling over logit vectors.

The sampler is a pure function of (logits, temperature, top_p, u) where u is
a uniform variate supplied by the caller; all run-level randomness therefore
lives in the counter-based streams of :mod:`cgrs.rng`.
"""

from __future__ import annotations

import numpy as np

#: Logit floor substituted for zero-probability entries when converting a
#: probability vector to logits; exp() of it underflows to exactly 0.
LOG_ZERO = -1e30


def distribution_to_logits(probs: np.ndarray) -> np.ndarray:
    """Log-probabilities with zero entries floored to a huge negative value."""
    probs = np.asarray(probs, dtype=np.float64)
    out = np.full(probs.shape, LOG_ZERO)
    nz = probs > 0.0
    out[nz] = np.log(probs[nz])
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax; hugely negative entries underflow to 0."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def nucleus_filter(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Zero out everything outside the smallest prefix with mass >= top_p.

    Tokens are ranked by probability (stable order on ties, so lower ids win);
    the token that crosses the threshold is kept.  Returns a renormalized
    vector.
    """
    if not 0.0 < top_p <= 1.0:
        raise ValueError(f"top_p must lie in (0, 1], got {top_p}")
    if top_p == 1.0:
        return probs
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    cutoff = int(np.searchsorted(csum, top_p, side="left"))
    keep = order[: cutoff + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def sample_from_logits(
    logits: np.ndarray, temperature: float, top_p: float, u: float
) -> int:
    """Pick a token id by inverse-CDF over the tempered, nucleus-filtered softmax.

    ``temperature = 0`` degenerates to greedy argmax.  The inverse CDF walks
    outcomes in token-id order, so the selection is fully determined by ``u``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if temperature < 0:
        raise ValueError(f"temperature must be nonnegative, got {temperature}")
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    if temperature == 0.0:
        return int(np.argmax(logits))
    probs = softmax(logits / temperature)
    probs = nucleus_filter(probs, top_p)
    csum = np.cumsum(probs)
    idx = int(np.searchsorted(csum, u, side="right"))
    if idx >= probs.size:  # u landed beyond fp cumsum tail
        idx = int(np.flatnonzero(probs > 0)[-1])
    return idx
