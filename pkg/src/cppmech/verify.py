"""Independent checks of the mechanism's guarantees on small instances.

Everything here recomputes quantities by a route that does not share code
with the production path where practical: brute-force optima over all
feasible sets, numerical Hessians by second differences, expectations from
enumerated distributions, and symbolic algebra for closed-form bounds.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CapacityError
from .instance import Instance, dumps
from .lottery import (
    ENUM_CAP,
    as_fractional,
    draw_distribution,
    exact_distribution,
    exact_distribution_plus,
    inclusion_probabilities,
    popcounts,
)
from .mechanism import _seed_record, _seed_sequence, build_program
from .solver import solve
from .valuations import (
    CoverageValuation,
    GraphicMatroid,
    MrsValuation,
    PartitionMatroid,
    UniformMatroid,
    Valuation,
    zero_valuation,
)

APPROX_RATIO = 1.0 - 1.0 / math.e
BF_CAP = 24


# ------------------------------------------------------------------ reports


@dataclass
class Check:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class AuditReport:
    name: str
    checks: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    fingerprint: str = ""
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def worst_margin(self) -> float:
        return min((c.margin for c in self.checks), default=math.inf)

    def add(self, name: str, passed: bool, margin: float, detail: str = "") -> Check:
        check = Check(name, bool(passed), float(margin), detail)
        self.checks.append(check)
        return check

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "fingerprint": self.fingerprint,
            "seeds": self.seeds,
            "notes": list(self.notes),
            "checks": [
                {"name": c.name, "passed": c.passed, "margin": c.margin, "detail": c.detail}
                for c in self.checks
            ],
        }

    def format_table(self) -> str:
        lines = [f"{self.name} [{self.fingerprint}]"]
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(f"  {mark}  {c.name:<28} margin={c.margin: .3e}  {c.detail}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def fingerprint(instance: Instance) -> str:
    return hashlib.sha256(dumps(instance.to_json()).encode()).hexdigest()[:12]


# -------------------------------------------------------------- brute force


def brute_force_opt(instance: Instance, cap: int = BF_CAP):
    """Welfare-maximising feasible set by exhaustive search.

    Returns ``(S*, welfare)``; among optimal sets the lexicographically
    smallest sorted index tuple wins.
    """
    m, k = instance.m, instance.k
    if m > cap:
        raise CapacityError(f"brute force over m={m} projects exceeds the cap {cap}")
    if m <= ENUM_CAP:
        welfare = np.sum([v.table(ENUM_CAP) for v in instance.valuations], axis=0)
        feasible = popcounts(m) <= k
        best = welfare[feasible].max()
        tie = np.flatnonzero(feasible & (welfare >= best - 1e-12 * max(1.0, abs(best))))
        sets = [tuple(j for j in range(m) if mask >> j & 1) for mask in tie]
        S = min(sets)
        return frozenset(S), float(instance.welfare(S))
    best_set, best_val = (), instance.welfare(())
    for size in range(1, k + 1):
        for S in itertools.combinations(range(m), size):
            val = instance.welfare(S)
            if val > best_val + 1e-12 * max(1.0, abs(best_val)) or (
                val >= best_val - 1e-12 * max(1.0, abs(best_val)) and S < best_set
            ):
                best_set, best_val = S, val
    return frozenset(best_set), float(best_val)


# ---------------------------------------------------------- set functions


def set_function_violations(v: Valuation, tol: float = 1e-9) -> list[str]:
    """Normalisation, monotonicity and submodularity, checked exhaustively."""
    T = v.table()
    m = v.m
    masks = np.arange(1 << m)
    out = []
    if abs(T[0]) > tol:
        out.append(f"v(empty) = {T[0]!r}")
    for j in range(m):
        without = masks[(masks >> j) & 1 == 0]
        gain_j = T[without | (1 << j)] - T[without]
        if gain_j.min() < -tol:
            out.append(f"not monotone in project {j}")
        for i in range(j + 1, m):
            base = without[(without >> i) & 1 == 0]
            second = T[base | (1 << i) | (1 << j)] - T[base | (1 << i)] - T[base | (1 << j)] + T[base]
            if second.max() > tol:
                out.append(f"not submodular on pair ({i}, {j})")
    return out


def rank_axiom_violations(matroid) -> list[str]:
    """Rank axioms of a matroid, including unit increments."""
    m = matroid.ground_size
    sets = [frozenset(j for j in range(m) if mask >> j & 1) for mask in range(1 << m)]
    r = [matroid.rank(S) for S in sets]
    out = []
    if r[0] != 0:
        out.append("rank(empty) != 0")
    for mask, S in enumerate(sets):
        if r[mask] > len(S):
            out.append(f"rank({sorted(S)}) exceeds |S|")
        for j in range(m):
            if mask >> j & 1:
                continue
            inc = r[mask | (1 << j)] - r[mask]
            if inc not in (0, 1):
                out.append(f"rank increment {inc} adding {j} to {sorted(S)}")
            for i in range(j + 1, m):
                if mask >> i & 1:
                    continue
                if r[mask | (1 << i)] + r[mask | (1 << j)] < r[mask | (1 << i) | (1 << j)] + r[mask]:
                    out.append(f"submodularity fails at {sorted(S)} + {{{i}, {j}}}")
    return out


# --------------------------------------------------------------- Hessians


@dataclass(frozen=True)
class DiscreteHessian:
    base: frozenset
    H: np.ndarray

    @property
    def max_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.H).max())

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.H, self.H.T))


def discrete_hessian(v: Valuation, S) -> DiscreteHessian:
    """``H(i, j) = v(S+i+j) - v(S+i) - v(S+j) + v(S)`` from value-oracle calls."""
    S = frozenset(S)
    memo = {}

    def val(T):
        if T not in memo:
            memo[T] = v.value(T)
        return memo[T]

    m = v.m
    H = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            H[i, j] = H[j, i] = val(S | {i, j}) - val(S | {i}) - val(S | {j}) + val(S)
    return DiscreteHessian(S, H)


def _hessians_all(table: np.ndarray, m: int) -> np.ndarray:
    """Discrete Hessians at every base set: array of shape (2**m, m, m)."""
    masks = np.arange(1 << m)
    out = np.empty((1 << m, m, m))
    for i in range(m):
        for j in range(m):
            ij = masks | (1 << i) | (1 << j)
            out[:, i, j] = table[ij] - table[masks | (1 << i)] - table[masks | (1 << j)] + table
    return out


def numerical_hessian(func, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central second differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    H = np.empty((m, m))
    f0 = func(x)
    eye = np.eye(m) * h
    for i in range(m):
        H[i, i] = (func(x + eye[i]) - 2 * f0 + func(x - eye[i])) / h**2
        for j in range(i + 1, m):
            H[i, j] = H[j, i] = (
                func(x + eye[i] + eye[j]) - func(x + eye[i] - eye[j])
                - func(x - eye[i] + eye[j]) + func(x - eye[i] - eye[j])
            ) / (4 * h**2)
    return H


def lottery_hessian(v: Valuation, x, k: int | None = None) -> np.ndarray:
    """Hessian of ``G(x) = E_{S ~ r_k(x)}[v(S)]`` as a mix of discrete Hessians.

    Weights are the distribution of ``r_{k-2}((k-2)/k * x)``, i.e. ``k-2``
    draws with per-draw marginals ``x/k``, scaled by ``(k-1)/k``.
    """
    x = as_fractional(x, k)
    kk = x.k
    if kk < 2:
        return np.zeros((x.m, x.m))
    probs = draw_distribution(x.x / kk, kk - 2)
    hess = _hessians_all(v.table(), x.m)
    return (kk - 1) / kk * np.einsum("s,sij->ij", probs, hess)


def _eig_floor(f_scale: float, m: int, h: float) -> float:
    # worst-case rounding error of a second difference, summed over a row
    return m * 4 * np.finfo(float).eps * max(f_scale, 1e-300) / h**2


def check_hessian_decomposition(v: Valuation, x, k: int | None = None,
                                h: float = 1e-4) -> AuditReport:
    """Compare the numerical Hessian of ``G`` with the discrete-Hessian mix."""
    x = as_fractional(x, k)
    report = AuditReport("hessian_decomposition")
    f_up = v.grand_value
    if x.k < 2:
        report.notes.append("k < 2: G is linear and the (k-2)-lottery is vacuous; skipped")
        return report
    if x.k == 2:
        report.notes.append("k = 2: the 0-draw lottery is the point mass on the empty set")
    numeric = numerical_hessian(lambda z: v.expected_polynomial(z / x.k, x.k), x.x, h)
    claimed = lottery_hessian(v, x)
    diff = float(np.abs(numeric - claimed).max())
    tol = 1e-4 * max(f_up, 1e-300)
    report.add("entrywise_agreement", diff <= tol, (tol - diff) / max(f_up, 1e-300),
               f"max |diff| = {diff:.3e}")
    for name, H, floor in (
        ("numeric_nsd", numeric, _eig_floor(f_up, x.m, h)),
        ("decomposition_nsd", claimed, 1e-12 * max(f_up, 1e-300)),
    ):
        top = float(np.linalg.eigvalsh(H).max())
        bound = 1e-6 * float(np.linalg.norm(H, 2)) + floor
        report.add(name, top <= bound, (bound - top) / max(f_up, 1e-300), f"max eig = {top:.3e}")
    return report


def check_discrete_hessians(v: Valuation, tol: float = 1e-9) -> AuditReport:
    """Every discrete Hessian of ``v`` is negative semi-definite."""
    report = AuditReport("discrete_hessian_nsd")
    hess = _hessians_all(v.table(), v.m)
    tops = np.linalg.eigvalsh(hess).max(axis=1)
    worst = float(tops.max())
    report.add("all_base_sets", worst <= tol, tol - worst, f"{hess.shape[0]} sets, max eig = {worst:.3e}")
    return report


# ------------------------------------------------------------------ audits


def expected_welfare_enumerated(instance: Instance, x, rounding: str = "rk") -> float:
    """Expected welfare from the enumerated output distribution."""
    x = as_fractional(x, instance.k)
    if rounding == "rkplus":
        dist = exact_distribution_plus(x, instance.n)
    else:
        dist = exact_distribution(x)
    welfare = np.sum([v.table() for v in instance.valuations], axis=0)
    return dist.expectation(welfare)


def audit_approximation(instance: Instance, tol: float = 1e-6, rounding: str = "rk",
                        max_iters: int = 5000, bf_cap: int = BF_CAP) -> AuditReport:
    """Expected welfare at the solved optimum against the brute-force optimum."""
    report = AuditReport("approximation", fingerprint=fingerprint(instance))
    program = build_program(instance, rounding)
    rep = solve(program, tol, max_iters)
    _, opt = brute_force_opt(instance, bf_cap)
    welfare = expected_welfare_enumerated(instance, rep.x_star, rounding)
    ratio = welfare / opt if opt > 0 else 1.0
    slack = (rep.duality_gap / opt if opt > 0 else 0.0) + (program.mu if rounding == "rkplus" else 0.0)
    threshold = APPROX_RATIO - slack
    report.add("ratio_vs_opt", ratio >= threshold, ratio - threshold,
               f"ratio = {ratio:.6f}, OPT = {opt:.6g}")
    report.seeds["ratio"] = ratio
    return report


def _pivot_welfare(instance: Instance, i: int, rounding: str, tol: float, max_iters: int) -> float:
    pivot = instance.without_player(i)
    program = build_program(pivot, rounding)
    rep = solve(program, tol, max_iters)
    values = program.player_values(rep.x_star)
    return math.fsum(np.delete(values, i))


def audit_payments(instance: Instance, tol: float = 1e-8, rounding: str = "rk",
                   max_iters: int = 5000) -> AuditReport:
    """Individual rationality and non-negative payments, both in expectation."""
    report = AuditReport("payments", fingerprint=fingerprint(instance))
    program = build_program(instance, rounding)
    rep = solve(program, tol, max_iters)
    values = program.player_values(rep.x_star)
    f_up = max(instance.f_upper, 1e-300)
    bound = -1e-6 * f_up
    for i in range(instance.n):
        pay = _pivot_welfare(instance, i, rounding, tol, max_iters) - math.fsum(np.delete(values, i))
        utility = values[i] - pay
        report.add(f"nonnegative_payment[{i}]", pay >= bound, (pay - bound) / f_up, f"E[p] = {pay:.6g}")
        report.add(f"individual_rationality[{i}]", utility >= bound, (utility - bound) / f_up,
                   f"E[u] = {utility:.6g}")
    return report


MISREPORT_KINDS = ("jitter", "delete", "perturb", "zero")


def random_misreport(v: Valuation, rng: np.random.Generator, kind: str | None = None) -> Valuation:
    """A plausible lie: jittered weights, a dropped term, a perturbed matroid or zero."""
    kind = kind or MISREPORT_KINDS[rng.integers(len(MISREPORT_KINDS))]
    m = v.m
    if kind == "zero":
        return zero_valuation(m)
    if isinstance(v, CoverageValuation):
        w = np.array(v.weights)
        sets = [set(s) for s in v.sets]
        if kind == "jitter":
            w = w * rng.uniform(0.5, 1.5, w.shape[0])
        elif kind == "delete" and w.size:
            w[rng.integers(w.size)] = 0.0
        elif kind == "perturb" and w.size:
            p, j = int(rng.integers(w.size)), int(rng.integers(m))
            sets[j] ^= {p}
        return CoverageValuation(m, w, tuple(sets), v.point_ids)
    terms = list(v.terms)
    if not terms:
        return v
    if kind == "jitter":
        terms = [(w * rng.uniform(0.5, 1.5), mat) for w, mat in terms]
    elif kind == "delete":
        terms.pop(int(rng.integers(len(terms))))
    elif kind == "perturb":
        t = int(rng.integers(len(terms)))
        w, mat = terms[t]
        terms[t] = (w, _perturb_matroid(mat, rng))
    return MrsValuation(m, tuple(terms))


def _perturb_matroid(mat, rng):
    step = int(rng.choice([-1, 1]))
    if isinstance(mat, UniformMatroid):
        return UniformMatroid(mat.ground_size, min(max(mat.rank_cap + step, 0), mat.ground_size))
    if isinstance(mat, PartitionMatroid):
        caps = list(mat.caps)
        b = int(rng.integers(len(caps)))
        caps[b] = max(caps[b] + step, 0)
        return PartitionMatroid(mat.ground_size, mat.blocks, tuple(caps))
    edges = list(mat.edges)
    e = int(rng.integers(len(edges)))
    u, w = edges[e]
    edges[e] = (u, max(w + step, 0))
    return GraphicMatroid(tuple(edges))


def audit_truthfulness(instance: Instance, misreports_per_player: int = 50, seed=None,
                       tol: float = 1e-8, rounding: str = "rk", max_iters: int = 5000) -> AuditReport:
    """Exact expected utility of truth-telling against random misreports.

    Utilities use the true valuation of the deviating player, the exact
    VCG expected payment and exact lottery values at both optima.
    """
    ss = _seed_sequence(seed)
    rng = np.random.default_rng(ss)
    report = AuditReport("truthfulness", fingerprint=fingerprint(instance), seeds=_seed_record(ss))
    true_program = build_program(instance, rounding)
    truth = solve(true_program, tol, max_iters)
    truth_values = true_program.player_values(truth.x_star)
    f_up = max(instance.f_upper, 1e-300)
    bound = -1e-4 * f_up

    def utility(i, values, pivot):
        return values[i] - (pivot - math.fsum(np.delete(values, i)))

    worst, trials = math.inf, 0
    for i in range(instance.n):
        pivot = _pivot_welfare(instance, i, rounding, tol, max_iters)
        u_truth = utility(i, truth_values, pivot)
        lies = [instance.valuations[i]] + [
            random_misreport(instance.valuations[i], rng) for _ in range(misreports_per_player)
        ]
        for t, lie in enumerate(lies):
            program = build_program(instance.replace_valuation(i, lie), rounding)
            rep = solve(program, tol, max_iters)
            margin = u_truth - utility(i, true_program.player_values(rep.x_star), pivot)
            if t == 0:
                report.add(f"identity_report[{i}]", abs(margin) <= 1e-12 * f_up, -abs(margin) / f_up)
                continue
            trials += 1
            worst = min(worst, margin)
    report.add("truth_vs_misreport", worst >= bound, (worst - bound) / f_up,
               f"{trials} trials, min margin = {worst:.3e}")
    report.seeds["trials"] = trials
    report.seeds["min_margin"] = worst
    return report


def check_rkplus_identity(instance: Instance, x) -> AuditReport:
    """Expected welfare under ``r_k^+``: enumerated vs the closed-form identity."""
    x = as_fractional(x, instance.k)
    report = AuditReport("rkplus_welfare_identity", fingerprint=fingerprint(instance))
    n, m = instance.n, instance.m
    mu = 2.0 ** (-2 * n * m)
    welfare = np.sum([v.table() for v in instance.valuations], axis=0)
    enumerated = exact_distribution_plus(x, n).expectation(welfare)
    singles = math.fsum(v.value({j}) for v in instance.valuations for j in range(m))
    closed = (1 - mu) * exact_distribution(x).expectation(welfare) + (
        mu / m**2 * singles * math.fsum(inclusion_probabilities(x))
    )
    diff = abs(enumerated - closed)
    report.add("identity", diff <= 1e-9, 1e-9 - diff, f"|diff| = {diff:.3e}, mu = {mu:.3e}")
    return report


def composition_bound(n: int, m: int) -> AuditReport:
    """Approximation of the random composition, checked in exact arithmetic.

    Symbolically ``(1 - e mu)(1 - 1/e - mu) + e mu - (1 - 1/e) = e mu**2``,
    so the bound holds with margin ``e * 2**(-4nm) > 0``.
    """
    import sympy

    mu = sympy.Symbol("mu", positive=True)
    E = sympy.E
    excess = sympy.expand((1 - E * mu) * (1 - 1 / E - mu) + E * mu - (1 - 1 / E))
    identity_ok = sympy.simplify(excess - E * mu**2) == 0
    value = excess.subs(mu, sympy.Rational(1, 2 ** (2 * n * m)))
    positive = bool(sympy.simplify(value) > 0)
    report = AuditReport(f"composition_bound(n={n}, m={m})")
    log10_margin = math.log10(math.e) - 4 * n * m * math.log10(2)
    report.add("excess_is_e_mu_squared", identity_ok, 0.0, f"excess = {sympy.sstr(excess)}")
    report.add("bound_at_least_1_minus_1_over_e", positive and identity_ok, 0.0,
               f"margin = 10**{log10_margin:.2f}")
    return report


# ----------------------------------------------------------- generators


def random_matroid(m: int, rng: np.random.Generator):
    kind = int(rng.integers(3))
    if kind == 0:
        return UniformMatroid(m, int(rng.integers(1, m + 1)))
    if kind == 1:
        labels = rng.integers(0, 3, m)
        blocks = [np.flatnonzero(labels == b).tolist() for b in range(3) if (labels == b).any()]
        return PartitionMatroid(m, tuple(blocks), tuple(int(rng.integers(0, 3)) for _ in blocks))
    vertices = int(rng.integers(2, 5))
    return GraphicMatroid(tuple((int(rng.integers(vertices)), int(rng.integers(vertices)))
                                for _ in range(m)))


def random_mrs(m: int, rng: np.random.Generator, terms: int | None = None) -> MrsValuation:
    count = int(rng.integers(1, 4)) if terms is None else terms
    return MrsValuation(m, tuple((float(rng.uniform(0.1, 2.0)), random_matroid(m, rng))
                                 for _ in range(count)))


def random_coverage(m: int, rng: np.random.Generator, points: int | None = None) -> CoverageValuation:
    count = int(rng.integers(2, 8)) if points is None else points
    weights = rng.uniform(0.1, 2.0, count)
    sets = tuple(set(np.flatnonzero(rng.random(count) < 0.4).tolist()) for _ in range(m))
    return CoverageValuation(m, weights, sets)


def random_valuation(m: int, rng: np.random.Generator, kind: str | None = None) -> Valuation:
    kind = kind or ("coverage" if rng.random() < 0.5 else "mrs")
    return random_coverage(m, rng) if kind == "coverage" else random_mrs(m, rng)


def random_instance(rng: np.random.Generator, n_max: int = 3, m_max: int = 8, k_max: int = 4,
                    m_min: int = 2) -> Instance:
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(m_min, m_max + 1))
    k = int(rng.integers(1, min(k_max, m) + 1))
    return Instance(n, m, k, tuple(random_valuation(m, rng) for _ in range(n)))


def random_interior_point(m: int, k: int, rng: np.random.Generator, margin: float = 1e-3) -> np.ndarray:
    """A point of ``P`` at distance at least ``margin`` from every facet."""
    x = rng.uniform(margin, 1 - margin, m)
    limit = k - margin * m - margin
    if x.sum() > limit:
        x = margin + (x - margin) * (limit - margin * m) / (x.sum() - margin * m)
    return x


def smoke_suite() -> list[Instance]:
    """Small deterministic instances covering each representation."""
    from .valuations import additive_valuation

    tri = GraphicMatroid(((0, 1), (1, 2), (2, 0)))
    cov = CoverageValuation(3, [1.0, 1.0, 2.0], ({0}, {1}, {0, 2}))
    return [
        Instance(1, 1, 1, (additive_valuation([1.0]),)),
        Instance(2, 2, 1, (additive_valuation([0.0, 1.0]), additive_valuation([0.0, 1.0]))),
        Instance(1, 3, 2, (additive_valuation([3.0, 1.0, 2.0]),)),
        Instance(2, 3, 2, (MrsValuation(3, ((1.0, tri), (0.5, UniformMatroid(3, 1)))), cov)),
        Instance(3, 4, 2, tuple(random_valuation(4, np.random.default_rng(s)) for s in range(3))),
    ]


def run_suite(instances, seed=None, tol: float = 1e-8, misreports: int = 10,
              rounding: str = "rk") -> list[AuditReport]:
    """The full battery of audits over a list of instances."""
    ss = _seed_sequence(seed)
    children = ss.spawn(len(instances))
    reports = []
    for inst, child in zip(instances, children):
        rng = np.random.default_rng(child)
        reports.append(audit_approximation(inst, tol, rounding))
        reports.append(audit_truthfulness(inst, misreports, child, tol, rounding))
        reports.append(audit_payments(inst, tol, rounding))
        for v in inst.valuations:
            reports.append(check_discrete_hessians(v))
            if inst.k >= 2:
                x = random_interior_point(inst.m, inst.k, rng)
                rep = check_hessian_decomposition(v, x, inst.k)
                rep.fingerprint = fingerprint(inst)
                reports.append(rep)
        reports.append(composition_bound(inst.n, inst.m))
    return reports
