"""Market model: clocks, triplets, jump measures, densities, JSON."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from numeraire import (DensitySpec, JumpAtom, JumpMeasure, MarketSpec,
                       OperationalClock, Segment, Triplet, clock_integral,
                       discretize_density, drift_rate, market_from_json,
                       market_to_json, validate_market, validate_triplet)
from numeraire.market import LOG_R_CAP

from conftest import gbm_market, jump_market


# --------------------------------------------------------------------------
# operational clock


def test_clock_accepts_strictly_increasing_from_zero():
    clock = OperationalClock(np.array([0.0, 0.5, 2.0]))
    assert clock.n_intervals == 2
    assert clock.horizon == 2.0
    np.testing.assert_allclose(clock.increments, [0.5, 1.5])


@pytest.mark.parametrize("times", [
    [0.5, 1.0],            # does not start at zero
    [0.0, 1.0, 1.0],       # not strictly increasing
    [0.0, 2.0, 1.0],       # decreasing
    [0.0],                 # no interval
    [0.0, np.nan],         # non-finite
])
def test_clock_rejects_bad_grids(times):
    with pytest.raises(ValueError):
        OperationalClock(np.asarray(times, dtype=np.float64))


# --------------------------------------------------------------------------
# triplets


def test_triplet_symmetrizes_roundoff_asymmetry():
    c = np.array([[1.0, 0.2 + 5e-9], [0.2, 1.0]])
    t = Triplet(np.zeros(2), c)
    np.testing.assert_array_equal(t.c, t.c.T)


def test_validation_reports_gross_asymmetry():
    t = Triplet(np.zeros(2), np.array([[1.0, 0.4], [0.1, 1.0]]))
    rep = validate_triplet(t)
    assert not rep.ok
    failed = {c.name for c in rep.checks if not c.passed}
    assert "c_symmetric" in failed


def test_triplet_clips_tiny_negative_eigenvalue():
    # rank-one matrix perturbed just below PSD
    v = np.array([1.0, 1.0])
    c = np.outer(v, v) - 5e-11 * np.eye(2)
    t = Triplet(np.zeros(2), c)
    assert np.linalg.eigvalsh(t.c).min() >= -1e-12


def test_validation_reports_indefinite_c():
    t = Triplet(np.zeros(2), np.diag([1.0, -0.5]))
    rep = validate_triplet(t)
    assert not rep.ok
    failed = {c.name for c in rep.checks if not c.passed}
    assert "c_psd" in failed


def test_validate_triplet_flags_nonfinite_drift():
    rep = validate_triplet(Triplet(np.array([np.inf]), np.array([[1.0]])))
    assert not rep.ok
    assert any(not c.passed for c in rep.checks)


def test_validate_market_aggregates_segment_names():
    m = gbm_market([0.1], [[1.0]])
    rep = validate_market(m)
    assert rep.ok
    assert all(c.name.startswith("segment[0].") for c in rep.checks)


def test_drift_rate_pin():
    # b = 0 plus one atom x = 2 (big, uncompensated) at rate 1/2
    t = Triplet(np.array([0.0]), np.array([[0.0]]),
                JumpMeasure(explicit=(JumpAtom(np.array([2.0]), 0.5),)))
    np.testing.assert_allclose(drift_rate(t), [1.0])


# --------------------------------------------------------------------------
# segment tiling


def test_market_rejects_gap_in_tiling():
    clock = OperationalClock(np.array([0.0, 1.0, 2.0]))
    seg = Segment(0, 1, Triplet(np.zeros(1), np.eye(1)))
    with pytest.raises(ValueError):
        MarketSpec(1, clock, [seg])  # interval [1, 2) uncovered


def test_market_rejects_overlap():
    clock = OperationalClock(np.array([0.0, 1.0, 2.0]))
    t = Triplet(np.zeros(1), np.eye(1))
    with pytest.raises(ValueError):
        MarketSpec(1, clock, [Segment(0, 2, t), Segment(1, 2, t)])


def test_effective_increments_uses_jump_clock_override():
    clock = OperationalClock(np.array([0.0, 1.0, 2.0]))
    t = Triplet(np.zeros(1), np.eye(1), dG_jump=0.25)
    m = MarketSpec(1, clock, [Segment(0, 2, t)])
    np.testing.assert_allclose(m.effective_increments, [0.25, 0.25])


# --------------------------------------------------------------------------
# clock integral


def test_clock_integral_partials_and_total():
    clock = OperationalClock(np.array([0.0, 1.0, 3.0]))
    res = clock_integral(np.array([2.0, 5.0]), clock)
    np.testing.assert_allclose(res.partials, [2.0, 12.0])
    assert res.total == 12.0
    assert not res.diverged


def test_clock_integral_flags_nonfinite():
    clock = OperationalClock(np.array([0.0, 1.0, 2.0]))
    assert clock_integral(np.array([1.0, np.inf]), clock).diverged


def test_clock_integral_rejects_negative_rate():
    clock = OperationalClock(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        clock_integral(np.array([-1.0]), clock)


# --------------------------------------------------------------------------
# densities


def _pareto(alpha=0.5, scale=1.0, x_min=2.0, x_max=math.inf, nodes=64,
            two_sided=False):
    return DensitySpec(family="pareto", scale=scale, shape=alpha,
                       direction=[1.0], x_min=x_min, x_max=x_max,
                       quad_nodes=nodes, two_sided=two_sided)


def test_pareto_mass_quadrature_matches_analytic():
    # integral of x^(-3/2) over [2, inf) = 2 / sqrt(2)
    atoms = discretize_density(_pareto(nodes=128), math.inf)
    total = sum(a.intensity for a in atoms)
    np.testing.assert_allclose(total, 2.0 / math.sqrt(2.0), rtol=1e-9)


def test_pareto_log_moment_quadrature_matches_analytic():
    # integral of log(x) x^(-3/2) over [2, inf)
    #   = 2 log 2 / sqrt(2) + 4 / sqrt(2)   (by parts)
    atoms = discretize_density(_pareto(nodes=128), math.inf)
    got = sum(a.intensity * math.log(float(a.x[0])) for a in atoms)
    want = (2.0 * math.log(2.0) + 4.0) / math.sqrt(2.0)
    np.testing.assert_allclose(got, want, rtol=1e-8)


def test_quadrature_respects_magnitude_cap():
    atoms = discretize_density(_pareto(), math.inf)
    assert max(float(np.abs(a.x).max()) for a in atoms) <= math.exp(LOG_R_CAP)


def test_damped_weights_nondecreasing_in_n():
    spec = _pareto()
    ladder = [discretize_density(spec, n) for n in (1, 2, 4, 8)]
    ladder.append(discretize_density(spec, math.inf))
    for lo, hi in zip(ladder, ladder[1:]):
        assert len(lo) == len(hi)
        for a_lo, a_hi in zip(lo, hi):
            np.testing.assert_array_equal(a_lo.x, a_hi.x)
            assert a_lo.intensity <= a_hi.intensity + 1e-18


def test_damping_ratio_pin():
    # at radius r the n = 2 and n = 4 weights differ by exactly r^(-1/4)
    w2 = discretize_density(_pareto(), 2)
    w4 = discretize_density(_pareto(), 4)
    for a2, a4 in zip(w2, w4):
        r = float(a2.x[0])
        np.testing.assert_allclose(a2.intensity / a4.intensity,
                                   r ** -0.25, rtol=1e-12)


def test_two_sided_density_mirrors_atoms():
    atoms = discretize_density(_pareto(two_sided=True), math.inf)
    xs = sorted(float(a.x[0]) for a in atoms)
    assert len(xs) == 128
    for lo, hi in zip(xs[:64], reversed(xs[64:])):
        np.testing.assert_allclose(lo, -hi)


def test_pareto_log_tail_classification():
    def spec(beta):
        return DensitySpec(family="pareto_log", scale=1.0, shape=beta,
                           direction=[1.0], x_min=math.e, x_max=math.inf,
                           quad_nodes=32)
    assert not spec(0.5).mass_finite()       # beta <= 1: infinite mass
    assert spec(1.5).mass_finite()
    assert not spec(1.5).integrates_log()    # beta <= 2: log moment infinite
    assert spec(3.0).integrates_log()
    # finite truncation makes everything finite regardless of the tail
    bounded = DensitySpec(family="pareto_log", scale=1.0, shape=1.5,
                          direction=[1.0], x_min=math.e, x_max=100.0,
                          quad_nodes=32)
    assert bounded.integrates_log()


def test_needs_ladder_only_for_log_divergent_tail():
    heavy = DensitySpec(family="pareto_log", scale=1.0, shape=1.5,
                        direction=[1.0], x_min=math.e, x_max=math.inf,
                        quad_nodes=32)
    light = _pareto()
    assert JumpMeasure(density=heavy).needs_ladder
    assert not JumpMeasure(density=light).needs_ladder
    assert not JumpMeasure(explicit=(JumpAtom(np.ones(1), 1.0),)).needs_ladder


def test_infinite_mass_density_rejects_raw_discretization():
    spec = DensitySpec(family="pareto_log", scale=1.0, shape=0.5,
                       direction=[1.0], x_min=math.e, x_max=math.inf,
                       quad_nodes=32)
    with pytest.raises(ValueError):
        discretize_density(spec, math.inf)


@given(st.integers(min_value=1, max_value=64))
@settings(max_examples=20, deadline=None)
def test_total_intensity_monotone_in_n(n):
    spec = _pareto()
    total_n = sum(a.intensity for a in discretize_density(spec, n))
    total_2n = sum(a.intensity for a in discretize_density(spec, 2 * n))
    assert total_n <= total_2n + 1e-15


# --------------------------------------------------------------------------
# JSON round trips


def test_market_json_round_trip():
    m = jump_market([0.1, -0.2], [[0.5, 0.1], [0.1, 0.4]],
                    [([0.2, -0.1], 0.5), ([2.0, 0.0], 0.25)], n_steps=4)
    back = market_from_json(market_to_json(m))
    assert back.d == m.d
    np.testing.assert_array_equal(back.clock.times, m.clock.times)
    t0, t1 = back.segments[0].triplet, m.segments[0].triplet
    np.testing.assert_array_equal(t0.b, t1.b)
    np.testing.assert_array_equal(t0.c, t1.c)
    assert len(t0.nu.explicit) == len(t1.nu.explicit)
    for a0, a1 in zip(t0.nu.explicit, t1.nu.explicit):
        np.testing.assert_array_equal(a0.x, a1.x)
        assert a0.intensity == a1.intensity


def test_density_json_round_trip():
    dens = DensitySpec(family="pareto_log", scale=0.5, shape=1.5,
                       direction=[1.0], x_min=math.e, x_max=math.inf,
                       quad_nodes=48)
    t = Triplet(np.array([0.1]), np.array([[1.0]]), JumpMeasure(density=dens))
    m = MarketSpec(1, OperationalClock(np.array([0.0, 1.0])),
                   [Segment(0, 1, t)])
    back = market_from_json(market_to_json(m))
    ds = back.segments[0].triplet.nu.density
    assert ds is not None
    assert ds.family == "pareto_log"
    assert ds.shape == 1.5
    assert math.isinf(ds.x_max)
    assert ds.quad_nodes == 48


def test_json_rejects_unknown_fields():
    m = gbm_market([0.1], [[1.0]])
    doc = json.loads(market_to_json(m))
    doc["segments"][0]["volatility"] = 1.0
    with pytest.raises(ValueError, match="volatility"):
        market_from_json(json.dumps(doc))


def test_json_rejects_missing_fields():
    m = gbm_market([0.1], [[1.0]])
    doc = json.loads(market_to_json(m))
    del doc["segments"][0]["b"]
    with pytest.raises(ValueError):
        market_from_json(json.dumps(doc))


def test_dg_jump_round_trips():
    t = Triplet(np.array([0.0]), np.array([[1.0]]),
                JumpMeasure(explicit=(JumpAtom(np.array([0.5]), 1.0),)),
                dG_jump=0.125)
    m = MarketSpec(1, OperationalClock(np.array([0.0, 1.0])),
                   [Segment(0, 1, t)])
    back = market_from_json(market_to_json(m))
    assert back.segments[0].triplet.dG_jump == 0.125


def test_declared_divergence_flag_round_trips():
    m = jump_market([0.1], [[0.5]], [([0.2], 0.5)], n_steps=2)
    assert not m.psi_divergent
    assert "psi_divergent" not in market_to_json(m)

    flagged = MarketSpec(m.d, m.clock, m.segments, psi_divergent=True)
    text = market_to_json(flagged)
    assert '"psi_divergent": true' in text
    assert market_from_json(text).psi_divergent
