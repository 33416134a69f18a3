"""Shared builders for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from numeraire import (ConstraintSet, JumpAtom, JumpMeasure, MarketSpec,
                       OperationalClock, Segment, Triplet, market_to_json)


def gbm_market(b, c, n_steps: int = 1, horizon: float = 1.0) -> MarketSpec:
    """Single-segment continuous market on a uniform clock."""
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    clock = OperationalClock(np.linspace(0.0, horizon, n_steps + 1))
    return MarketSpec(b.size, clock, [Segment(0, n_steps, Triplet(b, c))])


def jump_market(b, c, atoms, n_steps: int = 1, horizon: float = 1.0) -> MarketSpec:
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    nu = JumpMeasure(explicit=tuple(
        JumpAtom(np.atleast_1d(np.asarray(x, dtype=np.float64)), lam)
        for x, lam in atoms))
    clock = OperationalClock(np.linspace(0.0, horizon, n_steps + 1))
    return MarketSpec(b.size, clock, [Segment(0, n_steps, Triplet(b, c, nu))])


def poisson_uip_market(n_steps: int = 16) -> MarketSpec:
    """Pure-jump market with a single big positive atom: UIP in every
    direction with positive exposure, and P[at least one jump by T=1] =
    1 - exp(-1)."""
    return jump_market([0.0], [[0.0]], [([2.0], 1.0)], n_steps=n_steps)


def psi_tail_market(power: float, a: float = 0.005, k_geo: int = 1800,
                    log_eps: float = 12.0) -> MarketSpec:
    """Unit-volatility market whose drift blows up toward the clock horizon.

    The grid is geometric (1 - t_j = exp(-a j)) up to j = k_geo, followed by
    one wide closing interval that ends at distance exp(-log_eps) from the
    blow-up point; b on each interval is (1 - t)^(-power) at the left
    endpoint.  power = 0.6 makes the growth record non-integrable, 0.25
    keeps it integrable."""
    j = np.arange(k_geo + 1)
    times = np.concatenate([1.0 - np.exp(-a * j), [1.0 - np.exp(-log_eps)]])
    left = 1.0 - times[:-1]
    segs = [Segment(i, i + 1,
                    Triplet(np.array([left[i] ** -power]), np.array([[1.0]])))
            for i in range(times.size - 1)]
    return MarketSpec(1, OperationalClock(times), segs)


@pytest.fixture
def write_spec(tmp_path):
    """Serialize a market to a JSON file and return its path."""
    def _write(m: MarketSpec, name: str = "spec.json") -> str:
        path = tmp_path / name
        path.write_text(market_to_json(m), encoding="utf-8")
        return str(path)
    return _write


def feasible_unconstrained(d: int) -> ConstraintSet:
    return ConstraintSet.full_space(d)
