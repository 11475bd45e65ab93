"""Input validation helpers.

These mirror the ``check_*`` helpers of scikit-learn: they coerce, validate
and return a clean object, raising :class:`InputError` on failure.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .exceptions import InputError

#: slack allowed on the polytope / simplex constraints for solver output
FEASIBILITY_SLACK = 1e-9


def check_subset(S: Iterable[int], m: int, name: str = "S") -> frozenset[int]:
    """Return ``S`` as a frozenset of 0-based project indices in ``[0, m)``."""
    try:
        out = frozenset(int(j) for j in S)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: expected an iterable of integers") from exc
    bad = [j for j in out if j < 0 or j >= m]
    if bad:
        raise InputError(f"{name}: project index {min(bad)} outside [0, {m})")
    return out


def subset_to_mask(S: Iterable[int]) -> int:
    mask = 0
    for j in S:
        mask |= 1 << j
    return mask


def mask_to_subset(mask: int) -> frozenset[int]:
    out = []
    j = 0
    while mask:
        if mask & 1:
            out.append(j)
        mask >>= 1
        j += 1
    return frozenset(out)


def check_fractional(x, k: int, name: str = "x") -> np.ndarray:
    """Validate membership in ``P = {x : sum(x) <= k, 0 <= x <= 1}``.

    Violations up to :data:`FEASIBILITY_SLACK` are clamped back into ``P``.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InputError(f"{name}: expected a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite entries")
    if k < 1:
        raise InputError(f"k must be a positive integer, got {k}")
    if arr.size and (arr.min() < -FEASIBILITY_SLACK or arr.max() > 1 + FEASIBILITY_SLACK):
        raise InputError(f"{name}: entries must lie in [0, 1]")
    arr = np.clip(arr, 0.0, 1.0)
    total = arr.sum()
    if total > k * (1 + FEASIBILITY_SLACK):
        raise InputError(f"{name}: sum {total!r} exceeds the bound k={k}")
    if total > k:
        arr = arr * (k / total)
    return arr


def check_marginals(x, name: str = "marginals") -> np.ndarray:
    """Validate a per-draw distribution: ``x >= 0`` and ``sum(x) <= 1``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InputError(f"{name}: expected a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite entries")
    if arr.size and arr.min() < -FEASIBILITY_SLACK:
        raise InputError(f"{name}: negative entry {arr.min()!r}")
    arr = np.clip(arr, 0.0, None)
    total = arr.sum()
    if total > 1 + FEASIBILITY_SLACK:
        raise InputError(f"{name}: total mass {total!r} exceeds 1")
    if total > 1:
        arr = arr / total
    return arr


def check_random_state(seed) -> np.random.Generator:
    """Turn ``None``, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
