"""Truthful-in-expectation mechanism: MIDR allocation plus VCG payments.

The allocation solves the convex program for the chosen rounding scheme and
samples a set from the rounding at the optimum.  Payments are VCG payments
for that distributional range: player ``i`` pays the others' expected
welfare when ``i`` reports the zero valuation minus the others' expected
welfare at the actual outcome.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import InputError, NumericalError
from .instance import Instance
from .lottery import (
    RoundingOutcome,
    as_fractional,
    bernoulli_log,
    noise_log2,
    round_k,
    round_k_plus,
    sample_masks,
    sample_masks_plus,
)
from .solver import ConvexProgram, SolveReport, estimate_solution, solve

logger = logging.getLogger(__name__)

ROUND_CAP = 60


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _seed_record(ss: np.random.SeedSequence):
    return {"entropy": ss.entropy, "spawn_key": list(ss.spawn_key)}


def build_program(instance: Instance, rounding: str = "rk", mu_log2: float | None = None,
                  cap: int | None = None) -> ConvexProgram:
    return ConvexProgram(instance.valuations, instance.k, rounding, mu_log2, cap)


def _round(program: ConvexProgram, x, rng) -> RoundingOutcome:
    if program.rounding == "rkplus":
        return round_k_plus(x, program.n, rng, mu_log2=program.mu_log2)
    return round_k(x, rng)


# -------------------------------------------------------------- outcomes


@dataclass(frozen=True)
class Payments:
    realized: np.ndarray
    expected: np.ndarray
    pivot_welfare: np.ndarray
    pivots: tuple = field(default=(), repr=False)


def _floats(arr) -> list:
    # payments are NaN when they were not requested
    return [None if math.isnan(p) else float(p) for p in arr]


@dataclass(frozen=True)
class MechanismOutcome:
    chosen: frozenset
    payments: np.ndarray
    expected_payments: np.ndarray
    solve_report: SolveReport
    rng_trace: dict
    rounding: str
    expected_welfare: float
    player_values: np.ndarray

    def to_json(self) -> dict:
        return {
            "chosen": sorted(j + 1 for j in self.chosen),
            "rounding": self.rounding,
            "payments": _floats(self.payments),
            "expected_payments": _floats(self.expected_payments),
            "expected_welfare": self.expected_welfare,
            "player_values": [float(v) for v in self.player_values],
            "solver": self.solve_report.to_json(),
            "rng_trace": self.rng_trace,
        }


# ---------------------------------------------------------------- payments


def compute_payments(instance: Instance, tol: float = 1e-6, seed=None, rounding: str = "rk", *,
                     max_iters: int = 5000, mu_log2: float | None = None, cap: int | None = None,
                     main: SolveReport | None = None, chosen=None) -> Payments:
    """VCG payments for the MIDR allocation, exact and sampled.

    ``expected[i]`` is computed exactly with lottery oracles at both
    optima.  ``realized[i]`` is the one-sample unbiased estimator
    ``sum_{i' != i} v_i'(T) - sum_{i' != i} v_i'(S)`` with ``T`` drawn from the
    allocation without player ``i`` and ``S`` the realised outcome (sampled
    here when ``chosen`` is not given).
    """
    ss = _seed_sequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(instance.n + 1)]
    program = build_program(instance, rounding, mu_log2, cap)
    if main is None:
        main = solve(program, tol, max_iters)
    x_star = main.x_star
    if chosen is None:
        chosen = _round(program, x_star, rngs[-1]).chosen
    at_main = program.player_values(x_star)
    welfare_S = np.array([v.value(chosen) for v in instance.valuations])

    realized = np.zeros(instance.n)
    expected = np.zeros(instance.n)
    pivot_welfare = np.zeros(instance.n)
    pivots = []
    for i in range(instance.n):
        pivot_program = build_program(instance.without_player(i), rounding, mu_log2, cap)
        rep = solve(pivot_program, tol, max_iters)
        pivots.append(rep)
        others = np.arange(instance.n) != i
        at_pivot = pivot_program.player_values(rep.x_star)
        pivot_welfare[i] = math.fsum(at_pivot[others])
        expected[i] = pivot_welfare[i] - math.fsum(at_main[others])
        T = _round(pivot_program, rep.x_star, rngs[i]).chosen
        welfare_T = np.array([v.value(T) for v in instance.valuations])
        realized[i] = math.fsum(welfare_T[others]) - math.fsum(welfare_S[others])
    return Payments(realized, expected, pivot_welfare, tuple(pivots))


def realized_payment_samples(instance: Instance, main: SolveReport, pivots, size: int, seed=None,
                             rounding: str = "rk", mu_log2: float | None = None) -> np.ndarray:
    """``size`` independent draws of every player's realized payment.

    Vectorised form of the estimator in :func:`compute_payments`, given the
    main solve and the pivot solves (``Payments.pivots``).  Shape ``(size, n)``.
    """
    ss = _seed_sequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(instance.n + 1)]
    n = instance.n
    tables = np.array([v.table() for v in instance.valuations])

    def draw(x, rng):
        if rounding == "rkplus":
            return sample_masks_plus(x, n, size, rng, mu_log2=mu_log2)
        return sample_masks(x, size, rng)

    S = draw(main.x_star, rngs[-1])
    out = np.empty((size, n))
    for i, rep in enumerate(pivots):
        others = np.arange(n) != i
        T = draw(rep.x_star, rngs[i])
        out[:, i] = tables[others][:, T].sum(axis=0) - tables[others][:, S].sum(axis=0)
    return out


# --------------------------------------------------------------- allocation


def run_midr(instance: Instance, rounding: str = "rk", tol: float = 1e-6, seed=None, *,
             max_iters: int = 5000, mu_log2: float | None = None, cap: int | None = None,
             adaptive: bool = False, payments: bool = True) -> MechanismOutcome:
    """Maximal-in-distributional-range allocation with VCG payments.

    Solves the convex program for ``rounding`` and samples the outcome from
    the rounding at the optimum.  With ``adaptive=True`` (``rkplus`` only)
    the lottery part is drawn by :func:`sample_adaptive` instead.
    """
    ss = _seed_sequence(seed)
    round_ss, pay_ss = ss.spawn(2)
    program = build_program(instance, rounding, mu_log2, cap)
    rng = np.random.default_rng(round_ss)
    trace = {"seed": _seed_record(ss)}
    if adaptive:
        if rounding != "rkplus":
            raise InputError("adaptive sampling needs the conditioned rkplus objective")
        estimator = SolutionEstimator(program)
        sample = sample_adaptive(instance, rng, estimator=estimator)
        report = estimator.last_report
        chosen = sample.chosen
        trace["adaptive_rounds"] = list(sample.draw_rounds)
        if bernoulli_log(rng, program.mu_log2 * math.log(2.0)):
            trace["cancelled"] = True
            if rng.random() <= len(chosen) / instance.m:
                chosen = frozenset([int(rng.integers(instance.m))])
            else:
                chosen = frozenset()
    else:
        report = solve(program, tol, max_iters)
        outcome = _round(program, report.x_star, rng)
        chosen = outcome.chosen
        trace["rounding"] = outcome.trace()
    values = program.player_values(report.x_star)
    if payments:
        pay = compute_payments(instance, tol, pay_ss, rounding, max_iters=max_iters,
                               mu_log2=mu_log2, cap=cap, main=report, chosen=chosen)
        realized, expected = pay.realized, pay.expected
    else:
        realized = expected = np.full(instance.n, np.nan)
    return MechanismOutcome(
        chosen=chosen,
        payments=realized,
        expected_payments=expected,
        solve_report=report,
        rng_trace=trace,
        rounding=rounding,
        expected_welfare=math.fsum(values),
        player_values=values,
    )


def composed_branch_log_probability(n: int, m: int) -> float:
    """Natural log of ``e * 2**(-2nm)``, the exact-solve branch probability."""
    return 1.0 + noise_log2(n, m) * math.log(2.0)


def run_composed(instance: Instance, seed=None, tol: float = 1e-6, *, max_iters: int = 5000,
                 bf_cap: int = 24, cap: int | None = None) -> MechanismOutcome:
    """Random composition of the rkplus mechanism with an exact solver.

    With probability ``e * 2**(-2nm)`` the instance is solved optimally by
    brute force, otherwise :func:`run_midr` runs with ``rkplus``.  Expected
    payments are the VCG payments of the composed range.
    """
    from .verify import brute_force_opt

    ss = _seed_sequence(seed)
    branch_ss, midr_ss, pay_ss = ss.spawn(3)
    rng = np.random.default_rng(branch_ss)
    log_q = composed_branch_log_probability(instance.n, instance.m)
    q = math.exp(log_q)
    exact_branch = bernoulli_log(rng, log_q)

    base = run_midr(instance, "rkplus", tol, midr_ss, max_iters=max_iters, cap=cap)
    program = build_program(instance, "rkplus", cap=cap)
    opt_set, _ = brute_force_opt(instance, bf_cap)
    opt_values = np.array([v.value(opt_set) for v in instance.valuations])
    chosen = opt_set if exact_branch else base.chosen

    pay_rngs = [np.random.default_rng(s) for s in pay_ss.spawn(instance.n)]
    welfare_S = np.array([v.value(chosen) for v in instance.valuations])
    expected = np.zeros(instance.n)
    realized = np.zeros(instance.n)
    for i in range(instance.n):
        others = np.arange(instance.n) != i
        pivot = instance.without_player(i)
        pivot_set, pivot_opt = brute_force_opt(pivot, bf_cap)
        pivot_program = build_program(pivot, "rkplus", cap=cap)
        rep = solve(pivot_program, tol, max_iters)
        approx_pivot = math.fsum(pivot_program.player_values(rep.x_star)[others])
        exact_pay = pivot_opt - math.fsum(opt_values[others])
        approx_pay = approx_pivot - math.fsum(base.player_values[others])
        expected[i] = (1.0 - q) * approx_pay + q * exact_pay
        if bernoulli_log(pay_rngs[i], log_q):
            T = pivot_set
        else:
            T = _round(pivot_program, rep.x_star, pay_rngs[i]).chosen
        welfare_T = np.array([v.value(T) for v in instance.valuations])
        realized[i] = math.fsum(welfare_T[others]) - math.fsum(welfare_S[others])

    values = (1.0 - q) * program.player_values(base.solve_report.x_star) + q * opt_values
    trace = dict(base.rng_trace)
    trace["seed"] = _seed_record(ss)
    trace["exact_branch"] = exact_branch
    trace["exact_branch_log_probability"] = log_q
    return MechanismOutcome(
        chosen=chosen,
        payments=realized,
        expected_payments=expected,
        solve_report=base.solve_report,
        rng_trace=trace,
        rounding="composed",
        expected_welfare=math.fsum(values),
        player_values=values,
    )


# ------------------------------------------------------- adaptive sampling


class SolutionEstimator:
    """Memoised ``delta -> delta-estimate of x*`` for a conditioned program.

    Successive calls warm-start from the previous solve, so halving ``delta``
    only pays for the extra precision.
    """

    def __init__(self, program, lam: float | None = None, max_iters: int = 20000):
        self.program = program
        self.lam = program.conditioning() if lam is None else lam
        self.max_iters = max_iters
        self.last_report: SolveReport | None = None
        self._cache: dict[float, np.ndarray] = {}

    def __call__(self, delta: float) -> np.ndarray:
        if delta not in self._cache:
            report = estimate_solution(self.program, delta, self.lam, self.max_iters,
                                       warm_start=self.last_report)
            self.last_report = report
            self._cache[delta] = np.array(report.x_star.x)
        return self._cache[delta]


@dataclass(frozen=True)
class AdaptiveSample:
    chosen: frozenset
    draws: tuple
    # refinement rounds spent on each draw, and the final delta of each
    draw_rounds: tuple
    deltas: tuple

    @property
    def rounds(self) -> int:
        return max(self.draw_rounds)


def sample_adaptive(instance: Instance | None = None, seed=None, *,
                    estimator: SolutionEstimator | None = None, mu_log2: float | None = None,
                    round_cap: int = ROUND_CAP) -> AdaptiveSample:
    """Draw ``r_k(x*)`` while solving only as precisely as the draws demand.

    Each uniform draw is resolved on its own against a ``delta``-estimate of
    ``x*`` once it lies farther than ``delta*m/k`` from every interval
    boundary; otherwise ``delta`` is halved and the estimate refined.
    """
    if estimator is None:
        if instance is None:
            raise InputError("sample_adaptive needs an instance or an estimator")
        estimator = SolutionEstimator(build_program(instance, "rkplus", mu_log2))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(_seed_sequence(seed))
    m, k = estimator.program.m, estimator.program.k
    draws = rng.random(k)
    chosen, draw_rounds, deltas = set(), [], []
    for p in draws:
        delta = 1.0 / (2 * m * m)
        rounds = 1
        boundaries = np.cumsum(estimator(delta)) / k
        while np.any(np.abs(p - boundaries) <= delta * m / k):
            if rounds == round_cap:
                raise NumericalError(f"adaptive refinement exceeded {round_cap} rounds")
            delta /= 2
            rounds += 1
            boundaries = np.cumsum(estimator(delta)) / k
        j = int(np.searchsorted(boundaries, p, side="left"))
        if j < m:
            chosen.add(j)
        draw_rounds.append(rounds)
        deltas.append(delta)
    return AdaptiveSample(frozenset(chosen), tuple(float(p) for p in draws),
                          tuple(draw_rounds), tuple(deltas))


# --------------------------------------------------------- estimator facade


class CPPMechanism(BaseEstimator):
    """Estimator-style front end: ``fit`` solves, ``sample`` allocates.

    Parameters
    ----------
    rounding : {"rk", "rkplus"}
    tol : float
        Relative Frank-Wolfe gap at which the solve stops.
    max_iters : int
    random_state : int, optional
        Seed for :meth:`sample` and :meth:`allocate`.

    Attributes
    ----------
    x_ : ndarray
        Optimal fractional point.
    solve_report_ : SolveReport
    program_ : ConvexProgram
    """

    def __init__(self, rounding: str = "rk", tol: float = 1e-6, max_iters: int = 5000,
                 random_state=None):
        self.rounding = rounding
        self.tol = tol
        self.max_iters = max_iters
        self.random_state = random_state

    def fit(self, instance: Instance, y=None):
        if not isinstance(instance, Instance):
            raise InputError(f"fit expects an Instance, got {type(instance).__name__}")
        self.instance_ = instance
        self.program_ = build_program(instance, self.rounding)
        self.solve_report_ = solve(self.program_, self.tol, self.max_iters)
        self.x_ = np.array(self.solve_report_.x_star.x)
        return self

    def _check_fitted(self):
        if not hasattr(self, "x_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit before using this mechanism")

    def expected_welfare(self) -> float:
        self._check_fitted()
        return self.program_.objective(self.x_)

    def sample(self, size: int = 1, random_state=None) -> list[frozenset]:
        """Independent draws of the allocated project set."""
        self._check_fitted()
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        x = as_fractional(self.x_, self.program_.k)
        return [_round(self.program_, x, rng).chosen for _ in range(size)]

    def payments(self, random_state=None) -> Payments:
        self._check_fitted()
        seed = self.random_state if random_state is None else random_state
        return compute_payments(self.instance_, self.tol, seed, self.rounding,
                                max_iters=self.max_iters, main=self.solve_report_)

    def allocate(self, instance: Instance | None = None) -> MechanismOutcome:
        """Run the full mechanism (solve, sample, pay) on ``instance``."""
        if instance is not None:
            self.fit(instance)
        self._check_fitted()
        return run_midr(self.instance_, self.rounding, self.tol, self.random_state,
                        max_iters=self.max_iters)
