"""Acceptance criteria 1-10, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured margin,
visible in ``pytest -v`` output.  Run the file directly for the lines alone.
"""
import math
import time

import numpy as np

from cppmech.instance import Instance
from cppmech.lottery import (
    FractionalSolution,
    empirical_distribution,
    exact_distribution,
    inclusion_probability,
    sample_masks,
)
from cppmech.mechanism import (
    SolutionEstimator,
    build_program,
    compute_payments,
    realized_payment_samples,
    sample_adaptive,
)
from cppmech.solver import ConvexProgram, solve
from cppmech.valuations import GraphicMatroid, MrsValuation, PartitionMatroid, UniformMatroid
from cppmech.verify import (
    APPROX_RATIO,
    _eig_floor,
    audit_payments,
    audit_truthfulness,
    brute_force_opt,
    check_discrete_hessians,
    check_hessian_decomposition,
    check_rkplus_identity,
    composition_bound,
    expected_welfare_enumerated,
    lottery_hessian,
    numerical_hessian,
    random_coverage,
    random_instance,
    random_interior_point,
    random_matroid,
    random_mrs,
    random_valuation,
    smoke_suite,
)

SUITE_SEED = 2024


def report(capsys, number, title, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {title}  {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return passed


def random_suite(count=50, seed=SUITE_SEED):
    rng = np.random.default_rng(seed)
    return [random_instance(rng, n_max=3, m_max=8, k_max=4) for _ in range(count)]


def test_criterion_01_approximation_ratio(capsys):
    start = time.perf_counter()
    ratios = []
    for inst in random_suite():
        rep = solve(build_program(inst), 1e-6)
        _, opt = brute_force_opt(inst)
        welfare = expected_welfare_enumerated(inst, rep.x_star)
        ratios.append(welfare / opt if opt > 0 else 1.0)
    elapsed = time.perf_counter() - start
    threshold = APPROX_RATIO - 1e-3
    ok = min(ratios) >= threshold and elapsed < 120
    assert report(capsys, 1, "approximation ratio", ok,
                  f"min ratio {min(ratios):.4f} >= {threshold:.4f} over {len(ratios)} instances, "
                  f"{elapsed:.1f}s < 120s")


def test_criterion_02_distribution_equivalence(capsys):
    rng = np.random.default_rng(SUITE_SEED + 2)
    worst_tv, worst_incl = 0.0, 0.0
    for t in range(10):
        m = int(rng.integers(2, 7))
        k = int(rng.integers(1, min(4, m) + 1))
        x = FractionalSolution(random_interior_point(m, k, rng, 1e-3), k)
        exact = exact_distribution(x)
        emp = empirical_distribution(sample_masks(x, 10**6, rng), m)
        worst_tv = max(worst_tv, exact.tv_distance(emp))
        closed = 1 - (1 - x.x / k) ** k
        incl = np.array([inclusion_probability(x, j) for j in range(m)])
        worst_incl = max(worst_incl, np.abs(exact.marginals() - closed).max(), np.abs(incl - closed).max())
    ok = worst_tv < 0.005 and worst_incl <= 1e-9
    assert report(capsys, 2, "rounding distribution", ok,
                  f"max TV {worst_tv:.4f} < 0.005, max inclusion error {worst_incl:.1e} <= 1e-9")


def test_criterion_03_gradient(capsys):
    rng = np.random.default_rng(SUITE_SEED + 3)
    worst, k1 = 0.0, 0
    for t in range(100):
        m = int(rng.integers(1, 8))
        k = 1 if t % 5 == 0 else int(rng.integers(1, min(4, m) + 1))
        k1 += k == 1
        vals = tuple(random_valuation(m, rng) for _ in range(int(rng.integers(1, 4))))
        prog = ConvexProgram(vals, k, "rkplus" if t % 4 == 0 else "rk")
        x = random_interior_point(m, k, rng, 1e-2)
        g, fd = prog.gradient(x), prog.gradient_fd(x)
        worst = max(worst, np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12))
    ok = worst <= 1e-6
    assert report(capsys, 3, "gradient vs finite differences", ok,
                  f"max relative error {worst:.2e} <= 1e-6 over 100 pairs ({k1} with k = 1)")


def test_criterion_04_concavity(capsys):
    rng = np.random.default_rng(SUITE_SEED + 4)
    worst_eig, worst_entry, points, decomp = -math.inf, 0.0, 0, 0
    for inst in random_suite(10, SUITE_SEED + 40):
        prog = build_program(inst)
        f_up = prog.f_upper
        for _ in range(20):
            x = random_interior_point(inst.m, inst.k, rng)
            H = numerical_hessian(prog.polynomial, x, 1e-4)
            bound = 1e-6 * np.linalg.norm(H, 2) + _eig_floor(f_up, inst.m, 1e-4)
            worst_eig = max(worst_eig, (np.linalg.eigvalsh(H).max() - bound) / f_up)
            points += 1
            if inst.k >= 2:
                for v in inst.valuations:
                    rep = check_hessian_decomposition(v, x, inst.k)
                    numeric = numerical_hessian(lambda z: v.expected_polynomial(z / inst.k, inst.k), x)
                    err = np.abs(numeric - lottery_hessian(v, x, inst.k)).max() / max(v.grand_value, 1e-300)
                    worst_entry = max(worst_entry, err if rep.passed else math.inf)
                    decomp += 1
    ok = worst_eig <= 0 and worst_entry <= 1e-4
    assert report(capsys, 4, "concavity certification", ok,
                  f"max (eig - tolerance)/f_upper {worst_eig:.1e} <= 0 at {points} points; "
                  f"max decomposition error/f_upper {worst_entry:.1e} <= 1e-4 in {decomp} checks")


def catalog_valuations():
    rng = np.random.default_rng(SUITE_SEED + 5)
    out = []
    for m in range(2, 9):
        out.append(MrsValuation(m, ((1.0, UniformMatroid(m, int(rng.integers(1, m + 1)))),)))
        half = m // 2
        out.append(MrsValuation(m, ((2.0, PartitionMatroid(m, (range(half), range(half, m)), (1, 2))),)))
        out.append(MrsValuation(m, ((1.5, GraphicMatroid(tuple((j % 4, (j * 3 + 1) % 5) for j in range(m)))),)))
        out.append(MrsValuation(m, tuple((float(rng.uniform(0.1, 3)), random_matroid(m, rng)) for _ in range(4))))
        out.append(random_coverage(m, rng).as_mrs())
        out.append(random_mrs(m, rng))
    return out


def test_criterion_05_discrete_hessians(capsys):
    vals = catalog_valuations()
    worst = -math.inf
    sets = 0
    for v in vals:
        rep = check_discrete_hessians(v, 1e-9)
        worst = max(worst, 1e-9 - rep.checks[0].margin)
        sets += 1 << v.m
    ok = worst <= 1e-9
    assert report(capsys, 5, "discrete Hessians NSD", ok,
                  f"max eigenvalue {worst:.1e} <= 1e-9 over {len(vals)} valuations, {sets} base sets")


def truthfulness_suite():
    rng = np.random.default_rng(SUITE_SEED + 6)
    return [
        Instance(3, 5, 2, tuple(random_valuation(5, rng) for _ in range(3))),
        Instance(2, 6, 3, tuple(random_valuation(6, rng) for _ in range(2))),
        Instance(2, 8, 2, (random_coverage(8, rng), random_mrs(8, rng))),
        Instance(3, 4, 1, tuple(random_valuation(4, rng) for _ in range(3))),
    ]


def test_criterion_06_truthfulness(capsys):
    worst, trials = math.inf, 0
    for s, inst in enumerate(truthfulness_suite()):
        rep = audit_truthfulness(inst, misreports_per_player=50, seed=SUITE_SEED + s, tol=1e-8)
        trials += rep.seeds["trials"]
        worst = min(worst, rep.seeds["min_margin"] / inst.f_upper)
        if not all(c.passed for c in rep.checks if c.name.startswith("identity")):
            worst = -math.inf

    inst = truthfulness_suite()[0]
    main = solve(build_program(inst), 1e-9)
    pay = compute_payments(inst, 1e-9, seed=0, main=main)
    draws = realized_payment_samples(inst, main, pay.pivots, 10**5, SUITE_SEED)
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    z = float(np.max(np.abs(draws.mean(axis=0) - pay.expected) / np.maximum(se, 1e-300)))
    ok = worst >= -1e-4 and trials >= 300 and z <= 4
    assert report(capsys, 6, "truthfulness audit", ok,
                  f"min margin/f_upper {worst:.1e} >= -1e-4 over {trials} trials; "
                  f"payment estimator max |z| {z:.2f} <= 4 over 1e5 draws")


def test_criterion_07_ir_and_payments(capsys):
    worst, checks = math.inf, 0
    for inst in random_suite() + smoke_suite() + truthfulness_suite():
        rep = audit_payments(inst, 1e-8)
        checks += len(rep.checks)
        # margins are (value + 1e-6 f_upper) / f_upper
        worst = min(worst, rep.worst_margin - 1e-6)
    ok = worst >= -1e-6
    assert report(capsys, 7, "IR and nonnegative payments", ok,
                  f"min margin/f_upper {worst:.1e} >= -1e-6 over {checks} checks")


def adaptive_suite():
    rng = np.random.default_rng(SUITE_SEED + 8)
    return [
        Instance(1, 3, 2, (random_coverage(3, rng),)),
        Instance(1, 4, 2, (random_mrs(4, rng),)),
        Instance(2, 3, 3, (random_coverage(3, rng), random_mrs(3, rng))),
    ]


def test_criterion_08_adaptive_sampling(capsys):
    runs = 10**5
    worst_tv, worst_rounds = 0.0, 0.0
    for s, inst in enumerate(adaptive_suite()):
        est = SolutionEstimator(build_program(inst, "rkplus"))
        rng = np.random.default_rng(SUITE_SEED + s)
        masks = np.empty(runs, dtype=np.int64)
        rounds = []
        for r in range(runs):
            out = sample_adaptive(seed=rng, estimator=est)
            masks[r] = sum(1 << j for j in out.chosen)
            rounds.extend(out.draw_rounds)
        x_star = solve(build_program(inst, "rkplus"), 1e-14, 50_000).x_star
        worst_tv = max(worst_tv, empirical_distribution(masks, inst.m).tv_distance(exact_distribution(x_star)))
        worst_rounds = max(worst_rounds, float(np.mean(rounds)))
    ok = worst_tv < 0.01 and worst_rounds <= 2
    assert report(capsys, 8, "adaptive sampling", ok,
                  f"max TV {worst_tv:.4f} < 0.01, max mean rounds per draw {worst_rounds:.3f} <= 2 "
                  f"(3 instances x 1e5 runs)")


def test_criterion_09_rkplus_identity(capsys):
    rng = np.random.default_rng(SUITE_SEED + 9)
    worst, cases = 0.0, 0
    for n, m in [(1, 2), (1, 4), (1, 8), (2, 2), (2, 3), (2, 4), (4, 2), (3, 2), (1, 6)]:
        for _ in range(5):
            k = int(rng.integers(1, m + 1))
            inst = Instance(n, m, k, tuple(random_valuation(m, rng) for _ in range(n)))
            x = random_interior_point(m, k, rng)
            rep = check_rkplus_identity(inst, x)
            enumerated = expected_welfare_enumerated(inst, x, "rkplus")
            solver_path = build_program(inst, "rkplus").objective(x)
            worst = max(worst, 1e-9 - rep.checks[0].margin, abs(enumerated - solver_path))
            cases += 1
    ok = worst <= 1e-9
    assert report(capsys, 9, "rkplus welfare identity", ok,
                  f"max deviation {worst:.1e} <= 1e-9 over {cases} cases with nm <= 8")


def test_criterion_10_composition_bound(capsys):
    pairs = [(n, m) for n in (1, 2, 3, 5, 10) for m in (1, 2, 4, 8, 16, 20)]
    failed = [p for p in pairs if not composition_bound(*p).passed]
    ok = not failed
    assert report(capsys, 10, "composition bound", ok,
                  f"excess = e*mu^2 > 0 symbolically for {len(pairs) - len(failed)}/{len(pairs)} (n, m) pairs")


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn(None)
            except AssertionError:
                pass
