"""k-bounded-lottery rounding schemes and their exact output distributions.

Subsets of ``[m]`` are handled internally as integer bitmasks (bit ``j`` set
means project ``j`` is in the set), so a distribution over subsets is a
length-``2**m`` array indexed by mask.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CapacityError, InputError, NumericalError
from .validation import check_fractional, check_random_state, mask_to_subset, subset_to_mask

#: largest ``m`` for which exact enumeration over ``2**m`` subsets is allowed
ENUM_CAP = 20

#: negative round-off tolerated (and clamped) in inclusion-exclusion sums
NEGATIVE_GUARD = 1e-12


@dataclass(frozen=True)
class FractionalSolution:
    """A point of the polytope ``P = {x : sum(x) <= k, 0 <= x <= 1}``."""

    x: np.ndarray
    k: int

    def __post_init__(self):
        k = int(self.k)
        object.__setattr__(self, "k", k)
        arr = check_fractional(self.x, k)
        arr.setflags(write=False)
        object.__setattr__(self, "x", arr)

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def marginals(self) -> np.ndarray:
        """Per-draw probabilities ``x / k``."""
        return self.x / self.k


def as_fractional(x, k: int | None = None) -> FractionalSolution:
    if isinstance(x, FractionalSolution):
        if k is not None and k != x.k:
            return FractionalSolution(x.x, k)
        return x
    if k is None:
        raise InputError("k is required when x is not a FractionalSolution")
    return FractionalSolution(np.asarray(x, dtype=float), k)


@dataclass(frozen=True)
class RoundingOutcome:
    chosen: frozenset
    draws: tuple
    # r_k^+ only: whether the cancellation branch fired, then q_2 and j*
    cancelled: bool = False
    q2: float | None = None
    j_star: int | None = None

    def trace(self) -> dict:
        return {
            "draws": list(self.draws),
            "cancelled": self.cancelled,
            "q2": self.q2,
            "j_star": self.j_star,
        }


# ---------------------------------------------------------------- transforms


def _check_cap(m: int, cap: int | None) -> None:
    cap = ENUM_CAP if cap is None else cap
    if m > cap:
        raise CapacityError(
            f"exact enumeration over 2**{m} subsets exceeds the cap m <= {cap}"
        )


def subset_sums(y: np.ndarray) -> np.ndarray:
    """Return ``s[mask] = sum(y[j] for j in mask)`` for every mask."""
    m = y.shape[0]
    s = np.zeros(1 << m)
    for j in range(m):
        s.reshape(-1, 2, 1 << j)[:, 1, :] += y[j]
    return s


def popcounts(m: int) -> np.ndarray:
    return np.bitwise_count(np.arange(1 << m, dtype=np.int64)).astype(np.int64)


def mobius(g: np.ndarray) -> np.ndarray:
    """Inverse of the subset-sum (zeta) transform.

    Given ``g[A] = sum_{S <= A} p[S]`` returns ``p``; equivalently
    ``p[S] = sum_{R <= S} (-1)**(|S|-|R|) g[R]``. Evaluated one coordinate at a
    time, so every step is a single subtraction and no long alternating sum is
    ever formed.
    """
    p = np.array(g, dtype=float, copy=True)
    m = p.shape[0].bit_length() - 1
    for j in range(m):
        view = p.reshape(-1, 2, 1 << j)
        view[:, 1, :] -= view[:, 0, :]
    return p


def _clamp_probabilities(p: np.ndarray) -> np.ndarray:
    worst = p.min()
    if worst < -NEGATIVE_GUARD:
        raise NumericalError(f"inclusion-exclusion produced probability {worst!r}")
    np.clip(p, 0.0, None, out=p)
    return p


def containment_probabilities(y: np.ndarray, draws: int, clip: bool = True) -> np.ndarray:
    """``Pr[D <= A] = (1 - y(complement A))**draws`` for every mask ``A``.

    ``D`` is the set of projects hit by ``draws`` independent draws from the
    distribution ``y`` over projects (residual mass is the null outcome).
    """
    base = 1.0 - y.sum() + subset_sums(y)
    if clip:
        np.clip(base, 0.0, 1.0, out=base)
    return base**draws


def draw_distribution(y: np.ndarray, draws: int, cap: int | None = None) -> np.ndarray:
    """Exact distribution of the set hit by ``draws`` draws from ``y``."""
    y = np.asarray(y, dtype=float)
    m = y.shape[0]
    _check_cap(m, cap)
    p = _clamp_probabilities(mobius(containment_probabilities(y, draws)))
    # structural zeros: more projects than draws, or a project that is never drawn
    impossible = popcounts(m) > draws
    dead = subset_to_mask(np.flatnonzero(y <= 0.0).tolist())
    if dead:
        impossible |= (np.arange(1 << m) & dead) != 0
    p[impossible] = 0.0
    return p


# ---------------------------------------------------------- exact distribution


@dataclass(frozen=True)
class ExactDistribution:
    """Distribution over subsets of ``[m]`` stored as a mask-indexed vector."""

    m: int
    probs: np.ndarray = field(repr=False)

    def __getitem__(self, S) -> float:
        mask = 0
        for j in S:
            mask |= 1 << int(j)
        return float(self.probs[mask])

    @property
    def support(self) -> dict[frozenset, float]:
        nz = np.flatnonzero(self.probs > 0)
        return {mask_to_subset(int(mask)): float(self.probs[mask]) for mask in nz}

    def marginals(self) -> np.ndarray:
        out = np.empty(self.m)
        masks = np.arange(1 << self.m)
        for j in range(self.m):
            out[j] = self.probs[(masks >> j) & 1 == 1].sum()
        return out

    def expectation(self, table: np.ndarray) -> float:
        """Expected value of a set function given by its mask-indexed table."""
        return float(math.fsum(self.probs * table))

    def tv_distance(self, other) -> float:
        q = other.probs if isinstance(other, ExactDistribution) else np.asarray(other)
        return 0.5 * float(np.abs(self.probs - q).sum())

    def to_json(self) -> dict[str, float]:
        """Support keyed by sorted 1-based project lists, e.g. ``"1,3,4"``."""
        out = {}
        for S, p in sorted(self.support.items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))):
            out[",".join(str(j + 1) for j in sorted(S))] = p
        return out


def exact_distribution(x, k: int | None = None, cap: int | None = None) -> ExactDistribution:
    """Exact output distribution of :func:`round_k` at ``x``."""
    x = as_fractional(x, k)
    return ExactDistribution(x.m, draw_distribution(x.marginals, x.k, cap))


def noise_log2(n: int, m: int) -> float:
    """Default cancellation probability of ``r_k^+``: ``log2(mu) = -2nm``."""
    return -2.0 * n * m


def exact_distribution_plus(
    x, n: int, k: int | None = None, mu_log2: float | None = None, cap: int | None = None
) -> ExactDistribution:
    """Exact output distribution of :func:`round_k_plus` at ``x``.

    Computed from the enumerated distribution of ``r_k`` by tracking the
    cancellation branch explicitly (``|S|`` of each tentative set), rather
    than from the closed-form welfare identity.
    """
    x = as_fractional(x, k)
    base = exact_distribution(x, cap=cap).probs
    mu = 2.0 ** (noise_log2(n, x.m) if mu_log2 is None else mu_log2)
    m = x.m
    beta = popcounts(m) / m
    keep_singleton = math.fsum(base * beta)
    out = (1.0 - mu) * base
    out[0] += mu * (1.0 - keep_singleton)
    for j in range(m):
        out[1 << j] += mu * keep_singleton / m
    return ExactDistribution(m, out)


def inclusion_probability(x, j: int, k: int | None = None) -> float:
    """Probability that :func:`round_k` includes project ``j``."""
    x = as_fractional(x, k)
    if not 0 <= j < x.m:
        raise InputError(f"project index {j} outside [0, {x.m})")
    return 1.0 - (1.0 - x.x[j] / x.k) ** x.k


def inclusion_probabilities(x, k: int | None = None) -> np.ndarray:
    x = as_fractional(x, k)
    return 1.0 - (1.0 - x.x / x.k) ** x.k


# ------------------------------------------------------------------ sampling


def _boundaries(x: FractionalSolution) -> np.ndarray:
    # Right endpoints of the intervals I_j, laid out in ascending project order.
    return np.cumsum(x.x) / x.k


def hit_projects(points: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    """Index of the interval containing each point; ``m`` means no project."""
    idx = np.searchsorted(boundaries, points, side="left")
    return idx


def round_k(x, seed=None, k: int | None = None) -> RoundingOutcome:
    """Sample the k-bounded-lottery rounding of ``x``.

    ``[0, 1]`` is split into consecutive intervals of length ``x_j / k``;
    ``k`` uniform points are drawn and every project whose interval is hit
    is chosen.
    """
    x = as_fractional(x, k)
    rng = check_random_state(seed)
    draws = rng.random(x.k)
    idx = hit_projects(draws, _boundaries(x))
    chosen = frozenset(int(j) for j in idx if j < x.m)
    return RoundingOutcome(chosen, tuple(float(p) for p in draws))


def bernoulli_log(rng: np.random.Generator, log_p: float) -> bool:
    """Draw a Bernoulli(exp(log_p)) without forming exp(log_p).

    ``q <= p`` for uniform ``q`` is the event ``-log q >= -log p`` for an
    Exp(1) variable; by memorylessness it factors into independent
    comparisons over chunks of at most 30 nats, each one representable.
    """
    if log_p >= 0.0:
        return True
    remaining = -log_p
    while remaining > 0.0:
        chunk = min(remaining, 30.0)
        if rng.random() >= math.exp(-chunk):
            return False
        remaining -= chunk
    return True


def round_k_plus(x, n: int, seed=None, k: int | None = None,
                 mu_log2: float | None = None) -> RoundingOutcome:
    """Sample the conditioned variant ``r_k^+`` of :func:`round_k`.

    Runs ``round_k``; with probability ``mu`` (default ``2**(-2nm)``) discards
    the tentative set and, with probability ``|S|/m``, returns a uniformly
    random singleton instead of the empty set.
    """
    x = as_fractional(x, k)
    if n < 1:
        raise InputError(f"player count must be >= 1, got {n}")
    rng = check_random_state(seed)
    base = round_k(x, rng)
    log2_mu = noise_log2(n, x.m) if mu_log2 is None else mu_log2
    if not bernoulli_log(rng, log2_mu * math.log(2.0)):
        return base
    beta = len(base.chosen) / x.m
    q2 = float(rng.random())
    if q2 <= beta:
        j_star = int(rng.integers(x.m))
        return RoundingOutcome(frozenset([j_star]), base.draws, True, q2, j_star)
    return RoundingOutcome(frozenset(), base.draws, True, q2, None)


def sample_masks(x, size: int, seed=None, k: int | None = None) -> np.ndarray:
    """Vectorised :func:`round_k`: ``size`` independent outcomes as bitmasks."""
    x = as_fractional(x, k)
    rng = check_random_state(seed)
    idx = hit_projects(rng.random((size, x.k)), _boundaries(x))
    bits = np.where(idx < x.m, np.left_shift(1, np.minimum(idx, 62)), 0).astype(np.int64)
    return np.bitwise_or.reduce(bits, axis=1)


def sample_masks_plus(x, n: int, size: int, seed=None, k: int | None = None,
                      mu_log2: float | None = None) -> np.ndarray:
    """Vectorised :func:`round_k_plus`."""
    x = as_fractional(x, k)
    rng = check_random_state(seed)
    masks = sample_masks(x, size, rng)
    mu = 2.0 ** (noise_log2(n, x.m) if mu_log2 is None else mu_log2)
    hits = rng.binomial(size, mu) if mu > 0 else 0
    if hits:
        pos = rng.choice(size, size=hits, replace=False)
        beta = np.bitwise_count(masks[pos]) / x.m
        keep = rng.random(hits) <= beta
        j_star = rng.integers(x.m, size=hits)
        masks[pos] = np.where(keep, np.left_shift(1, j_star), 0)
    return masks


def empirical_distribution(masks: np.ndarray, m: int) -> ExactDistribution:
    counts = np.bincount(masks, minlength=1 << m).astype(float)
    return ExactDistribution(m, counts / counts.sum())
