"""Concave maximisation of expected welfare over the fractional polytope.

The objective is ``f(x) = E_{S ~ r(x)}[sum_i v_i(S)]`` for the k-bounded
lottery rounding ``r = r_k`` (or its conditioned variant ``r_k^+``), maximised
over ``P = {x : sum(x) <= k, 0 <= x <= 1}`` by Frank-Wolfe with away steps.
Linear maximisation over ``P`` is closed form: take the top ``k`` positive
gradient coordinates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ContractError, InputError, NumericalError
from .lottery import FractionalSolution, as_fractional, noise_log2
from .valuations import LotterySpec, Valuation

logger = logging.getLogger(__name__)

ROUNDINGS = ("rk", "rkplus")

#: step shrink factor of the backtracking line search
SHRINK = 0.5
#: Armijo sufficient-increase constant
SUFFICIENT_INCREASE = 1e-4
MAX_BACKTRACKS = 60


class ConvexProgram:
    """Expected welfare of a rounding scheme as a function on ``P``.

    Parameters
    ----------
    valuations : sequence of Valuation
        One reported valuation per player, all over the same ``m`` projects.
    k : int
        Cardinality bound.
    rounding : {"rk", "rkplus"}
        ``rkplus`` adds the concave noise term of the conditioned scheme.
    mu_log2 : float, optional
        ``log2`` of the cancellation probability of ``rkplus``; defaults to
        ``-2 n m``.
    cap : int, optional
        Enumeration cap passed to general-MRS lottery oracles.
    """

    def __init__(self, valuations: Sequence[Valuation], k: int, rounding: str = "rk",
                 mu_log2: float | None = None, cap: int | None = None):
        if not valuations:
            raise InputError("at least one valuation is required")
        ms = {v.m for v in valuations}
        if len(ms) != 1:
            raise InputError(f"valuations disagree on the project count: {sorted(ms)}")
        if rounding not in ROUNDINGS:
            raise InputError(f"rounding must be one of {ROUNDINGS}, got {rounding!r}")
        self.valuations = tuple(valuations)
        self.n = len(self.valuations)
        self.m = ms.pop()
        self.k = int(k)
        if not 1 <= self.k <= self.m:
            raise InputError(f"k must satisfy 1 <= k <= m={self.m}, got {k}")
        self.rounding = rounding
        self.mu_log2 = noise_log2(self.n, self.m) if mu_log2 is None else float(mu_log2)
        self.cap = cap

    @property
    def mu(self) -> float:
        """Cancellation probability of ``rkplus`` (0 for ``rk``)."""
        return 2.0**self.mu_log2 if self.rounding == "rkplus" else 0.0

    @property
    def f_upper(self) -> float:
        """``sum_i v_i([m])``, an upper bound on the optimal value."""
        return math.fsum(v.grand_value for v in self.valuations)

    @property
    def singleton_totals(self) -> np.ndarray:
        """``sum_j v_i({j})`` for each player."""
        return np.array([v.singleton_values.sum() for v in self.valuations])

    def _spec(self, x: np.ndarray) -> LotterySpec:
        return LotterySpec(x / self.k, self.k)

    def player_values(self, x) -> np.ndarray:
        """Exact expected value of each player under the rounding at ``x``."""
        x = as_fractional(x, self.k).x
        spec = self._spec(x)
        base = np.array([v.lottery_value(spec, self.cap) for v in self.valuations])
        if self.rounding == "rk":
            return base
        incl = np.sum(1.0 - (1.0 - x / self.k) ** self.k)
        mu = self.mu
        return (1.0 - mu) * base + (mu / self.m**2) * self.singleton_totals * incl

    def objective(self, x) -> float:
        return math.fsum(self.player_values(x))

    def gradient(self, x) -> np.ndarray:
        """Exact gradient from two lottery-oracle queries per coordinate.

        ``df/dx_j = sum_i L_i({j}) - L_i({})`` where ``L_i(R)`` is the value of
        ``v_i`` over the ``(k-1)``-draw lottery with per-draw marginals
        ``x/k`` and promise ``R``.
        """
        x = as_fractional(x, self.k).x
        if self.k == 1:
            # zero draws: L({j}) = v({j}) and L({}) = 0, so f is linear
            grad = np.sum([v.singleton_values for v in self.valuations], axis=0)
        else:
            y = x / self.k
            grad = np.sum(
                [v.lottery_gains(y, self.k - 1, self.cap) for v in self.valuations], axis=0
            )
        if self.rounding == "rkplus":
            mu = self.mu
            noise = (mu / self.m**2) * self.singleton_totals.sum() * (1.0 - x / self.k) ** (self.k - 1)
            grad = (1.0 - mu) * grad + noise
        return np.asarray(grad, dtype=float)

    def polynomial(self, x: np.ndarray) -> float:
        """``f`` extended as a polynomial beyond ``P`` (finite differences)."""
        x = np.asarray(x, dtype=float)
        y = x / self.k
        total = math.fsum(v.expected_polynomial(y, self.k, self.cap) for v in self.valuations)
        if self.rounding == "rkplus":
            mu = self.mu
            incl = np.sum(1.0 - (1.0 - y) ** self.k)
            total = (1.0 - mu) * total + (mu / self.m**2) * self.singleton_totals.sum() * incl
        return total

    def gradient_fd(self, x, h: float = 1e-5) -> np.ndarray:
        """Central finite differences of :meth:`polynomial`."""
        x = np.asarray(x, dtype=float)
        grad = np.empty(self.m)
        for j in range(self.m):
            e = np.zeros(self.m)
            e[j] = h
            grad[j] = (self.polynomial(x + e) - self.polynomial(x - e)) / (2 * h)
        return grad

    def conditioning(self) -> float:
        """Curvature lower bound ``lambda`` of the ``rkplus`` objective.

        Every eigenvalue of the Hessian is at most ``-lambda`` on ``P``.
        """
        if self.rounding != "rkplus":
            raise ContractError("a curvature bound exists only for the rkplus objective")
        if self.k < 2:
            raise ContractError("for k = 1 the rkplus noise term is linear; no curvature bound")
        lam = self.mu / self.m**2 * self.f_upper / math.e
        if not lam > 0:
            raise ContractError(f"curvature bound underflows (mu = 2**{self.mu_log2})")
        return lam


@dataclass(frozen=True)
class ConditioningParams:
    lam: float
    delta: float
    epsilon: float

    @classmethod
    def from_delta(cls, lam: float, delta: float, f_upper: float) -> "ConditioningParams":
        """Relative tolerance ``eps`` whose optimum gap forces a ``delta``-estimate."""
        if not lam > 0:
            raise ContractError(f"curvature bound must be positive, got {lam!r}")
        if not delta > 0:
            raise InputError(f"delta must be positive, got {delta!r}")
        eps = delta**2 * lam / (2.0 * f_upper) if f_upper > 0 else math.inf
        return cls(lam, delta, eps)


@dataclass(frozen=True)
class SolveReport:
    x_star: FractionalSolution
    objective_value: float
    duality_gap: float
    iterations: int
    tolerance_achieved: float
    status: str
    f_upper: float
    active_set: tuple = field(default=(), repr=False)
    objective_trace: tuple = field(default=(), repr=False)
    conditioning: ConditioningParams | None = None

    def to_json(self) -> dict:
        out = {
            "x_star": [float(v) for v in self.x_star.x],
            "k": self.x_star.k,
            "objective_value": self.objective_value,
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
            "tolerance_achieved": self.tolerance_achieved,
            "status": self.status,
            "f_upper": self.f_upper,
        }
        if self.conditioning is not None:
            c = self.conditioning
            out["conditioning"] = {"lambda": c.lam, "delta": c.delta, "epsilon": c.epsilon}
        return out


def top_k_vertex(grad: np.ndarray, k: int) -> tuple:
    """Vertex of ``P`` maximising ``<grad, s>``; ties go to the lower index."""
    order = np.argsort(-grad, kind="stable")[: min(k, grad.shape[0])]
    return tuple(sorted(int(j) for j in order if grad[j] > 0))


def _vertex_vector(vertex: tuple, m: int) -> np.ndarray:
    v = np.zeros(m)
    v[list(vertex)] = 1.0
    return v


def _finite(val, what: str, x) -> None:
    if not np.all(np.isfinite(val)):
        raise NumericalError(f"non-finite {what} at x={np.asarray(x).tolist()}")


def solve(program, tol: float = 1e-6, max_iters: int = 5000,
          warm_start: SolveReport | None = None) -> SolveReport:
    """Maximise ``program.objective`` over ``P`` by away-step Frank-Wolfe.

    ``program`` needs ``m``, ``k``, ``f_upper``, ``objective`` and
    ``gradient``.  Stops once the Frank-Wolfe gap ``<grad, s - x>`` is at
    most ``tol * f_upper``; by concavity the gap bounds the suboptimality.
    """
    if not tol > 0:
        raise InputError(f"tol must be positive, got {tol!r}")
    m, k = program.m, program.k
    f_upper = program.f_upper
    target = tol * f_upper

    if warm_start is not None and warm_start.active_set:
        active = dict(warm_start.active_set)
    else:
        active = {(): 1.0}
    vectors = {v: _vertex_vector(v, m) for v in active}

    def current_point():
        return np.clip(sum(w * vectors[v] for v, w in active.items()), 0.0, 1.0)

    x = current_point()
    f = program.objective(x)
    g = program.gradient(x)
    _finite(f, "objective", x)
    _finite(g, "gradient", x)
    trace = [f]
    curvature = None
    status = "max_iters"
    gap = math.inf
    it = 0
    for it in range(max_iters + 1):
        s = top_k_vertex(g, k)
        if s not in vectors:
            vectors[s] = _vertex_vector(s, m)
        fw_dir = vectors[s] - x
        gap = float(g @ fw_dir)
        if gap <= target:
            status = "converged"
            break
        if it == max_iters:
            break
        away = min(active, key=lambda v: float(g @ vectors[v]))
        away_dir = x - vectors[away]
        away_gap = float(g @ away_dir)
        if gap >= away_gap or len(active) == 1:
            d, gmax, step_kind = fw_dir, 1.0, "fw"
        else:
            alpha = active[away]
            d, gmax, step_kind = away_dir, alpha / (1.0 - alpha), "away"

        gd = float(g @ d)
        dd = float(d @ d)
        gamma = gmax if not curvature else min(gmax, gd / (curvature * dd))
        for _ in range(MAX_BACKTRACKS):
            x_new = np.clip(x + gamma * d, 0.0, 1.0)
            f_new = program.objective(x_new)
            g_new = program.gradient(x_new)
            _finite(f_new, "objective", x_new)
            _finite(g_new, "gradient", x_new)
            slope = float(g_new @ d)
            # Concavity: a non-negative slope at the trial point means f
            # increased along the whole step, even when rounding hides it.
            if slope >= 0 or f_new >= f + SUFFICIENT_INCREASE * gamma * gd:
                break
            gamma *= SHRINK
        else:
            status = "stalled"
            break
        bend = (gd - slope) / (gamma * dd)
        curvature = bend if bend > 0 else None

        if step_kind == "fw":
            for v in active:
                active[v] *= 1.0 - gamma
            active[s] = active.get(s, 0.0) + gamma
            if gamma >= 1.0:
                active = {s: 1.0}
        else:
            for v in active:
                active[v] *= 1.0 + gamma
            active[away] -= gamma
            if gamma >= gmax or active[away] <= 1e-15:
                del active[away]
        total = sum(active.values())
        active = {v: w / total for v, w in active.items() if w > 0}
        x, f, g = x_new, f_new, g_new
        trace.append(f)

    if status != "converged":
        logger.warning("solve stopped with status %s, gap %.3g (target %.3g)", status, gap, target)
    rel = gap / f_upper if f_upper > 0 else 0.0
    return SolveReport(
        x_star=FractionalSolution(x, k),
        objective_value=float(f),
        duality_gap=float(gap),
        iterations=it,
        tolerance_achieved=float(rel),
        status=status,
        f_upper=float(f_upper),
        active_set=tuple(sorted(active.items())),
        objective_trace=tuple(trace),
    )


def estimate_solution(program, delta: float, lam: float | None = None,
                      max_iters: int = 20000, warm_start: SolveReport | None = None) -> SolveReport:
    """Return a report whose ``x_star`` is within ``delta`` of the optimum.

    With curvature at least ``lam``, ``f(x*) - f(x) >= lam/2 * ||x - x*||^2``,
    so a gap of ``delta**2 * lam / 2`` (relative tolerance ``eps``) certifies
    the distance.  ``lam`` defaults to ``program.conditioning()``.
    """
    if lam is None:
        if not hasattr(program, "conditioning"):
            raise ContractError("no curvature bound available for this program")
        lam = program.conditioning()
    params = ConditioningParams.from_delta(lam, delta, program.f_upper)
    logger.debug("delta=%g lambda=%g -> eps=%g", delta, lam, params.epsilon)
    report = solve(program, tol=params.epsilon, max_iters=max_iters, warm_start=warm_start)
    radius = math.sqrt(2.0 * max(report.duality_gap, 0.0) / lam)
    if radius > delta:
        raise NumericalError(
            f"could not certify a {delta:g}-estimate: gap {report.duality_gap:.3g} "
            f"only bounds the distance by {radius:.3g}"
        )
    return SolveReport(**{**report.__dict__, "conditioning": params})
