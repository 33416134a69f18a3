"""End-to-end acceptance gate.

One test per numbered criterion.  Each test prints a single line

    criterion N (X.XXs): PASS — <headline numbers>

(or FAIL with the reason) so the suite summary doubles as a checklist.
Every Monte Carlo leg runs on frozen seeds; tolerances and runtime
budgets are asserted, not just reported.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from fractions import Fraction
from itertools import product

import numpy as np
from scipy.special import ndtr

from numeraire import (
    ConstraintSet,
    contains,
    DensitySpec,
    JumpAtom,
    JumpMeasure,
    MarketSpec,
    OperationalClock,
    Segment,
    Triplet,
    asymptotic_deviation,
    bessel_arbitrage_demo,
    detect_uip,
    growth_gradient,
    growth_rate,
    is_admissible,
    is_immediate_arbitrage,
    q_a,
    rel_rate,
    relative_wealth_identity,
    simulate_paths,
    solve_numeraire,
    supermartingale_test,
    upbr_demo,
    verify_solution,
    wealth_from_increments,
)

from conftest import gbm_market, poisson_uip_market, psi_tail_market


@contextmanager
def _criterion(n: int, budget: float):
    """Time a criterion body, enforce its runtime budget, print one line."""
    info = {"detail": ""}
    t0 = time.perf_counter()
    try:
        yield info
        elapsed = time.perf_counter() - t0
        if elapsed >= budget:
            raise AssertionError(
                f"runtime {elapsed:.2f}s exceeds the {budget:.0f}s budget")
    except BaseException as exc:
        elapsed = time.perf_counter() - t0
        print(f"criterion {n} ({elapsed:.2f}s): FAIL — {exc}")
        raise
    print(f"criterion {n} ({elapsed:.2f}s): PASS — {info['detail']}")


# --------------------------------------------------------------------------
# shared market family (criteria 3 and 5)


def _jump_diffusion_family(n_steps: int = 256):
    """Ten seeded jump-diffusions (d <= 3, <= 4 atoms) that pass the UIP
    gate, cycling through the three constraint presets."""
    rng = np.random.default_rng(202)
    presets = ("unconstrained", "long-only", "simplex")
    out = []
    for i in range(10):
        d = int(rng.integers(1, 4))
        a = rng.normal(size=(d, d)) / math.sqrt(d)
        c = a @ a.T + 0.15 * np.eye(d)
        b = rng.normal(scale=0.3, size=d)
        atoms = tuple(
            JumpAtom(rng.uniform(-0.4, 1.2, size=d),
                     float(rng.uniform(0.2, 1.0)))
            for _ in range(int(rng.integers(0, 5))))
        t = Triplet(b, c, JumpMeasure(explicit=atoms))
        cons = ConstraintSet.from_preset(presets[i % 3], d)
        m = MarketSpec(d, OperationalClock(np.linspace(0.0, 1.0, n_steps + 1)),
                       [Segment(0, n_steps, t)])
        out.append((m, cons))
    return out


def _feasible_portfolio(rng, cons, t, rho, margin, min_dist=0.0):
    """Draw a constraint-feasible, jump-admissible portfolio.

    `margin` floors the single-jump wealth factor; `min_dist` keeps the
    draw away from the optimizer so wealth-ratio statistics carry signal.
    """
    d = rho.size
    floor = min_dist * (1.0 + float(np.linalg.norm(rho)))
    for _ in range(500):
        if cons.m == 0:
            pi = rho + rng.normal(scale=0.4 / math.sqrt(d), size=d)
        elif cons.is_cone:
            pi = rng.exponential(scale=0.25, size=d)
        else:
            w = rng.dirichlet(np.ones(d + 1))
            pi = w[:d]
        if (np.linalg.norm(pi - rho) >= floor
                and is_admissible(pi, t, margin=margin)):
            return pi
    raise AssertionError("portfolio sampler exhausted its draw budget")


# --------------------------------------------------------------------------
# criteria


def test_criterion_1_continuous_markets_match_closed_form():
    with _criterion(1, 1.0) as info:
        rng = np.random.default_rng(101)
        worst = 0.0
        for _ in range(5):
            d = int(rng.integers(1, 5))
            a = rng.normal(size=(d, d))
            c = a @ a.T + 0.1 * np.eye(d)
            b = rng.normal(size=d)
            m = MarketSpec(d, OperationalClock([0.0, 1.0]),
                           [Segment(0, 1, Triplet(b, c))])
            sol = solve_numeraire(m, ConstraintSet.from_preset(
                "unconstrained", d))
            gap = float(np.abs(sol.segments[0].rho
                               - np.linalg.solve(c, b)).max())
            worst = max(worst, gap)
        assert worst <= 1e-7
        info["detail"] = f"5 markets, worst |rho - c^-1 b|_inf = {worst:.1e}"


def test_criterion_2_poisson_market_has_certified_uip():
    with _criterion(2, 5.0) as info:
        m = poisson_uip_market(n_steps=16)
        t = m.segments[0].triplet
        cons = ConstraintSet.from_preset("long-only", 1)
        rep = detect_uip(t, cons)
        assert rep.uip_exists, "UIP not detected"
        assert rep.witness is not None and contains(cons, rep.witness)
        member, checks = is_immediate_arbitrage(rep.witness, t)
        assert member, f"witness fails membership: {checks}"

        bundle = simulate_paths(m, 1000, seed=7)
        w = wealth_from_increments(rep.witness, bundle)
        assert (np.diff(w.values, axis=1) >= -1e-12).all(), \
            "witness wealth decreased on some path"
        p_hat = float((w.terminal > 1.0 + 1e-12).mean())
        p_true = 1.0 - math.exp(-1.0)
        se = math.sqrt(p_true * (1.0 - p_true) / 1000)
        assert p_hat >= 0.5
        assert abs(p_hat - p_true) <= 4.0 * se
        info["detail"] = (f"witness={rep.witness}, wealth nondecreasing on "
                          f"1000 paths, P[W>1]={p_hat:.3f} vs {p_true:.3f} "
                          f"({(p_hat - p_true) / se:+.2f} SE)")


def test_criterion_3_certificates_and_gradient_identity():
    with _criterion(3, 30.0) as info:
        worst_cert = 0.0
        worst_rel = -np.inf
        worst_ident = 0.0
        worst_fd = 0.0
        for i, (m, cons) in enumerate(_jump_diffusion_family()):
            t = m.segments[0].triplet
            assert not detect_uip(t, cons).uip_exists
            sol = solve_numeraire(m, cons)
            cert = verify_solution(sol, m, cons, n_dirs=64)
            assert cert.passed
            worst_cert = max(worst_cert, cert.max_rel)
            rho = sol.segments[0].rho
            grad = growth_gradient(rho, t)
            rng = np.random.default_rng(1000 + i)
            for _ in range(20):
                pi = _feasible_portfolio(rng, cons, t, rho, margin=0.05)
                rel = rel_rate(pi, rho, t)
                worst_rel = max(worst_rel, rel)
                ident = abs(rel - float(grad @ (pi - rho)))
                worst_ident = max(worst_ident, ident / (1.0 + abs(rel)))
                step = pi - rho
                norm = float(np.linalg.norm(step))
                if norm > 1e-9:
                    u = step / norm
                    h = 1e-5
                    fd = (growth_rate(rho + h * u, t)
                          - growth_rate(rho - h * u, t)) / (2.0 * h)
                    worst_fd = max(worst_fd,
                                   abs(float(grad @ u) - fd) / (1.0 + abs(fd)))
        assert worst_cert <= 1e-7
        assert worst_rel <= 1e-7
        assert worst_ident <= 1e-6
        assert worst_fd <= 1e-6
        info["detail"] = (f"10 markets: max certified rel = {worst_cert:.1e}, "
                          f"gradient identity gap = {worst_ident:.1e}, "
                          f"finite-difference gap = {worst_fd:.1e}")


def test_criterion_4_bessel_arbitrage_converges_first_order():
    with _criterion(4, 60.0) as info:
        target = 1.0 / ndtr(1.0)
        coarse = bessel_arbitrage_demo(4000, 200, 0, steps_ref=8000)
        fine = bessel_arbitrage_demo(8000, 200, 0, steps_ref=8000)
        err_coarse = np.abs(np.asarray(coarse.terminal) - target)
        err_fine = np.abs(np.asarray(fine.terminal) - target)
        assert err_coarse.max() <= 1e-2, \
            f"worst path error {err_coarse.max():.2e} exceeds 1e-2"
        mean_ratio = (abs(np.mean(np.asarray(fine.terminal) - target))
                      / abs(np.mean(np.asarray(coarse.terminal) - target)))
        rms_ratio = math.sqrt((err_fine ** 2).mean()
                              / (err_coarse ** 2).mean())
        assert 0.35 <= mean_ratio <= 0.65, \
            f"mean error ratio {mean_ratio:.3f} not ~ 1/2"
        assert rms_ratio <= 0.75
        info["detail"] = (f"200 paths hit 1/Phi(1) to {err_coarse.max():.1e}; "
                          f"doubling steps scaled the error by "
                          f"{mean_ratio:.2f} (mean), {rms_ratio:.2f} (rms)")


def test_criterion_5_wealth_ratios_are_supermartingales():
    with _criterion(5, 120.0) as info:
        family = _jump_diffusion_family()
        min_slack = np.inf
        for i, (m, cons) in enumerate(family):
            t = m.segments[0].triplet
            sol = solve_numeraire(m, cons)
            rho = sol.segments[0].rho
            rng = np.random.default_rng(2000 + i)
            for j in range(5):
                pi = _feasible_portfolio(rng, cons, t, rho,
                                         margin=0.65, min_dist=0.1)
                rep = supermartingale_test(pi, sol, m, cons,
                                           n_paths=10_000, seed=411 + j)
                assert rep.passed, \
                    f"market {i} portfolio {j}: means {rep.means}"
                slack = float(((1.0 + 3.0 * rep.ses) - rep.means).min())
                min_slack = min(min_slack, slack)

        # control: a deliberately wrong baseline must be caught
        m0, cons0 = family[0]
        t0 = m0.segments[0].triplet
        rho_true = solve_numeraire(m0, cons0).segments[0].rho
        n_steps = m0.clock.times.size - 1
        shifted = MarketSpec(
            m0.d, m0.clock,
            [Segment(0, n_steps, Triplet(t0.b + 0.3, t0.c, t0.nu))])
        sol_bad = solve_numeraire(shifted, cons0)
        rep_bad = supermartingale_test(rho_true, sol_bad, m0, cons0,
                                       n_paths=10_000, seed=99)
        assert not rep_bad.passed, "wrong baseline slipped through"
        excess = float((rep_bad.means - (1.0 + 3.0 * rep_bad.ses)).max())
        info["detail"] = (f"50 portfolio tests passed (worst slack "
                          f"{min_slack:.1e}); corrupted baseline rejected "
                          f"(excess {excess:+.3f})")


def test_criterion_6_truncation_ladder_separates_singular_from_integrable():
    with _criterion(6, 120.0) as info:
        full = ConstraintSet.from_preset("unconstrained", 1)
        singular = psi_tail_market(0.6)
        sol = solve_numeraire(singular, full)
        assert not sol.integrable, "singular spec was not flagged"
        rep = upbr_demo(singular, (2, 4, 8, 16), 2000, 0)
        assert rep.mode == "divergence" and rep.passed
        meds = np.asarray(rep.medians)
        assert (np.diff(meds) > 0).all(), f"medians not increasing: {meds}"
        assert meds[-1] > 10.0 * meds[0]

        control = psi_tail_market(0.25)
        sol_c = solve_numeraire(control, full)
        assert sol_c.integrable
        rep_c = upbr_demo(control, (2, 4, 8, 16), 2000, 0,
                          require_singular=False)
        assert rep_c.mode == "control" and rep_c.passed
        ratios = np.asarray(rep_c.medians) / rep_c.medians[0]
        assert (ratios < 1.1).all()
        info["detail"] = (f"singular medians {np.round(meds, 2).tolist()} "
                          f"(x{meds[-1] / meds[0]:.0f}); integrable control "
                          f"stable (max ratio {ratios.max():.3f})")


def test_criterion_7_relative_wealth_identity_is_exact():
    with _criterion(7, 1.0) as info:
        m = gbm_market([0.05], [[1.0]], n_steps=1000, horizon=1.0)
        bundle = simulate_paths(m, 100, seed=3)
        increments = bundle.increments[:, :, 0]
        resid = relative_wealth_identity(0.9 * increments, 0.5 * increments)
        assert resid <= 1e-12
        info["detail"] = (f"identity residual {resid:.1e} on 100 paths x "
                          f"1000 steps")


def test_criterion_8_heavy_tail_ladder_is_cauchy():
    with _criterion(8, 30.0) as info:
        dens = DensitySpec(family="pareto_log", scale=2.5e-4, shape=1.5,
                           direction=[1.0], x_min=math.e, x_max=math.inf,
                           quad_nodes=64)
        t = Triplet(np.array([0.1]), np.array([[1.0]]),
                    JumpMeasure(density=dens))
        m = MarketSpec(1, OperationalClock([0.0, 1.0]), [Segment(0, 1, t)])
        sol = solve_numeraire(m, ConstraintSet.from_preset(
            "unconstrained", 1))
        trace = sol.segments[0].approx_trace
        assert trace is not None and len(trace) >= 4
        ns = [n for n, _ in trace]
        assert all(b == 2 * a for a, b in zip(ns, ns[1:]))
        rhos = np.array([r[0] for _, r in trace])
        diffs = np.abs(np.diff(rhos))
        assert diffs[-1] <= 1e-6, "ladder did not converge"
        tail = diffs[2:]
        assert tail.size >= 4 and (np.diff(tail) < 0).all(), \
            "successive corrections do not shrink"
        info["detail"] = (f"{len(ns)} rungs to n={ns[-1]}; last correction "
                          f"{diffs[-1]:.1e}, {tail.size - 1} strictly "
                          f"shrinking steps")


def test_criterion_9_deviation_asymptotics_match_exact_law():
    with _criterion(9, 60.0) as info:
        m = gbm_market([0.05], [[1.0]], n_steps=2 ** 18, horizon=720.0)
        sol = solve_numeraire(m, ConstraintSet.from_preset(
            "unconstrained", 1))
        rep = asymptotic_deviation([1.0], sol, m, 0.5, 1000, seed=0)
        assert rep.branch == "deviation" and rep.passed
        assert rep.bankrupt_paths == 0
        H = float(rep.H[-1])
        assert H >= 5.0
        assert rep.pct95_normalized <= -0.85
        # exact law: terminal log-ratio ~ N(-H, 2H), so the normalized 95th
        # percentile sits at -1 + z_0.95 * sqrt(2/H)
        exact = -1.0 + 1.6448536269514722 * math.sqrt(2.0 / H)
        assert abs(rep.pct95_normalized - exact) <= 0.025

        # q_a properties: branch continuity and growth to the a -> 0 limit
        ys = np.linspace(0.0, 3.0, 301)
        for a in (0.2, 0.5, 0.8):
            left = -math.log(a) + (1.0 - 1.0 / a) * a
            right = a - 1.0 - math.log(a)
            assert abs(left - right) <= 1e-12
            assert (np.asarray(q_a(ys, a)) >= -1e-15).all()
        ladder = [np.asarray(q_a(ys[1:], a))
                  for a in (0.5, 0.25, 0.1, 0.01)]
        for lo, hi in zip(ladder, ladder[1:]):
            assert (hi >= lo - 1e-12).all(), "q_a not increasing as a drops"
        limit = ys[1:] - 1.0 - np.log(ys[1:])
        assert (np.abs(ladder[-1] - limit)
                [ys[1:] >= 0.01] <= 1e-12).all()
        info["detail"] = (f"pct95 {rep.pct95_normalized:.4f} <= -0.85, "
                          f"exact-law gap {rep.pct95_normalized - exact:+.4f}"
                          f" (H={H:.0f}); q_a checks passed")


# --------------------------------------------------------------------------
# criterion 10: LP detector vs an exhaustive lattice oracle


def _lattice_instance(rng):
    """A tiny integer market whose cone membership is exactly decidable."""
    d = int(rng.integers(1, 3))
    b = rng.integers(-2, 3, size=d).astype(float)
    kind = int(rng.integers(0, 3))
    if kind == 0:
        c = np.zeros((d, d))
    elif kind == 1:
        v = rng.integers(-2, 3, size=d).astype(float)
        c = np.outer(v, v)
    else:
        a = rng.integers(-1, 2, size=(d, d)).astype(float)
        c = a @ a.T
    atoms = tuple(
        JumpAtom(rng.integers(-2, 3, size=d).astype(float),
                 float(rng.choice([0.5, 1.0, 1.5])))
        for _ in range(int(rng.integers(0, 4))))
    preset = "unconstrained" if rng.integers(0, 2) == 0 else "long-only"
    return Triplet(b, c, JumpMeasure(explicit=atoms)), preset, d


def _reduced_directions(d, reach):
    """All integer directions with coprime entries in [-reach, reach]^d."""
    out = []
    for tup in product(range(-reach, reach + 1), repeat=d):
        if all(v == 0 for v in tup):
            continue
        g = 0
        for v in tup:
            g = math.gcd(g, abs(v))
        if g == 1:
            out.append(tup)
    return out


def _exact_member(xi, b, c, atoms, long_only):
    """Immediate-arbitrage membership in exact rational arithmetic."""
    d = len(xi)
    if long_only and any(v < 0 for v in xi):
        return False
    if any(sum(int(c[i][j]) * xi[j] for j in range(d)) != 0
           for i in range(d)):
        return False
    prods = [sum(int(x[k]) * xi[k] for k in range(d)) for x, _ in atoms]
    if any(p < 0 for p in prods):
        return False
    drift = sum(Fraction(int(b[k])) * xi[k] for k in range(d))
    for (x, lam), p in zip(atoms, prods):
        if sum(int(v) ** 2 for v in x) <= 1:
            drift -= Fraction(lam) * p
    if drift < 0:
        return False
    bare = sum(int(b[k]) * xi[k] for k in range(d))
    return any(p != 0 for p in prods) or bare != 0


def test_criterion_10_lp_detector_agrees_with_lattice_oracle():
    with _criterion(10, 60.0) as info:
        rng = np.random.default_rng(404)
        hits = 0
        for _ in range(50):
            t, preset, d = _lattice_instance(rng)
            cons = ConstraintSet.from_preset(preset, d)
            atoms = [(a.x, a.intensity) for a in t.nu.explicit]
            long_only = preset == "long-only"
            oracle = False
            for xi in _reduced_directions(d, 8):
                exact = _exact_member(xi, t.b, t.c, atoms, long_only)
                xi_f = np.array(xi, dtype=float)
                member, _ = is_immediate_arbitrage(xi_f, t)
                grid = member and (not long_only or bool((xi_f >= 0).all()))
                assert exact == grid, \
                    f"membership split on xi={xi}: exact={exact} grid={grid}"
                oracle = oracle or exact
            rep = detect_uip(t, cons)
            assert rep.uip_exists == oracle, \
                f"detector={rep.uip_exists} oracle={oracle} for b={t.b}"
            if oracle:
                assert rep.witness is not None
                member, _ = is_immediate_arbitrage(rep.witness, t)
                assert member and contains(cons, rep.witness)
            hits += int(oracle)
        assert 0 < hits < 50, "degenerate instance mix"
        info["detail"] = (f"50 instances agree with the exact lattice "
                          f"oracle ({hits} with increasing profit, "
                          f"{50 - hits} without)")
