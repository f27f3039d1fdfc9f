"""Classical locality-sensitive masks: independent position sampling.

Each of the `count` masks is the OR of k positions drawn uniformly with
replacement, so a pair at distance D collides under one mask with
probability (1 - D/d)^k and is missed by the whole table with probability
(1 - (1 - D/d)^k)^count.  Unlike the covering constructions, recall is
only probabilistic: the false-negative rate is tuned, never zero.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .bits import words_for
from .families import FamilyParams, MaskFamily, _as_rng, _pack_bit_rows


def build_classical(d: int, k: int, count: int, r: int = 0, rng=None) -> MaskFamily:
    """Sample `count` masks, each covering k uniform positions (with
    replacement, so effective weights can be below k).  r is recorded as
    the intended query radius; it does not affect the sampling."""
    params = FamilyParams("classical", d, r, k=k, count=count)
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    gen = _as_rng(rng)
    positions = gen.integers(0, d, size=(count, k))
    bits = np.zeros((count, d), dtype=np.uint8)
    bits[np.arange(count)[:, np.newaxis], positions] = 1
    masks = _pack_bit_rows(bits, d)
    assert masks.shape == (count, words_for(d))
    fam = MaskFamily(params, masks)
    fam.seed = seed
    return fam


def classical_collision_prob(d: int, k: int, distance: int) -> float:
    """Chance that one k-sample mask avoids all `distance` differing bits."""
    if not 0 <= distance <= d:
        raise ValueError(f"distance {distance} outside [0, {d}]")
    return (1.0 - distance / d) ** k


def classical_false_negative_prob(d: int, k: int, count: int, distance: int) -> float:
    """Chance that a pair at the given distance shares no bucket at all."""
    return (1.0 - classical_collision_prob(d, k, distance)) ** count


class ClassicalTuning(NamedTuple):
    k: int
    count: int


def classical_tuning(n: int, d: int, r: int, c: float, delta: float = 0.01) -> ClassicalTuning:
    """Standard parameter choice for n points and radius r.

    k is the smallest sample count pushing the collision chance at the
    first non-approximate distance (ceil(c*r) + 1) to 1/(2n) or below, so
    a query expects at most half a far candidate per mask; count is then
    sized to keep the false-negative rate at distance r below delta.
    """
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must be a probability strictly between 0 and 1")
    if r < 1 or r > d:
        raise ValueError("need 1 <= r <= d")
    far = min(math.ceil(c * r - 1e-12) + 1, d)
    p_far = 1.0 - far / d
    target = 1.0 / (2.0 * n)
    if p_far <= 0.0:
        k = 1
    else:
        # smallest k with p_far^k <= 1/(2n); the log ratio only seeds the
        # search, the exact power decides
        k = max(1, math.ceil(math.log(target) / math.log(p_far)))
        while p_far**k > target:
            k += 1
        while k > 1 and p_far ** (k - 1) <= target:
            k -= 1
    p_near = classical_collision_prob(d, k, r)
    if p_near >= 1.0:
        count = 1
    else:
        count = max(1, math.ceil(math.log(delta) / math.log(1.0 - p_near)))
    return ClassicalTuning(k, count)
