"""Small shared helpers: seeding, rounding, log-sum-exp."""

from __future__ import annotations

import math
import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    raise TypeError(f"unsupported seed tag type: {type(tag)!r}")


def derive_seed(seed: int, *tags) -> int:
    """Deterministically derive an independent integer sub-seed.

    Uses numpy's SeedSequence so streams derived with different tags are
    statistically independent and stable across platforms and runs.
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """A Generator seeded by `derive_seed(seed, *tags)`."""
    return np.random.default_rng(derive_seed(seed, *tags))


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero toward +inf."""
    return int(math.floor(x + 0.5))


def logsumexp(a: np.ndarray, axis=None):
    """Numerically stable log(sum(exp(a))) along `axis`.

    Rows that are uniformly -inf return -inf instead of nan.
    """
    a = np.asarray(a, dtype=np.float64)
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):  # log(0) -> -inf is the wanted result
        out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)
