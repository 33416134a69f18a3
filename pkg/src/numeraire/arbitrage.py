"""Unbounded-increasing-profit detection.

A direction xi supports an immediate arbitrage when it has no diffusion
exposure, no negatively-exposed jumps, nonnegative truncated drift, and is
not a null investment; wealth along xi is then nondecreasing and
nonconstant.  UIP exists iff such a direction lies in the recession cone of
the constraints.  Detection is a single LP whose objective
xi.(b + sum_j lambda_j x_j) is nonnegative on the feasible region and
strictly positive exactly off the null subspace (for atomic measures the
objective equals the truncated drift plus sum_j lambda_j xi.x_j (1 + 1{|x_j|<=1}),
a sum of feasibility-nonnegative terms vanishing only on N).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .constraints import ConstraintSet, NullSpace, null_space, recession_cone
from .market import Triplet

__all__ = ["NuipReport", "LpFailureError", "is_immediate_arbitrage", "detect_uip"]

TOL = 1e-9


class LpFailureError(RuntimeError):
    """The detection LP itself failed; distinct from a clean 'no UIP'."""


@dataclass(eq=False)
class NuipReport:
    uip_exists: bool
    witness: np.ndarray | None
    lp_value: float
    checks: dict

    def to_dict(self) -> dict:
        return {
            "uip_exists": self.uip_exists,
            "witness": None if self.witness is None else self.witness.tolist(),
            "lp_value": self.lp_value,
            "checks": self.checks,
        }


def is_immediate_arbitrage(xi, t: Triplet, tol: float = TOL,
                           ns: NullSpace | None = None) -> tuple[bool, dict]:
    """Check the immediate-arbitrage conditions for a direction.

    The direction is normalized to unit sup-norm first (the conditions are
    scale-invariant).  Returns (verdict, per-condition record).
    """
    xi = np.asarray(xi, dtype=np.float64)
    conditions: dict = {}
    scale = float(np.abs(xi).max(initial=0.0))
    if scale == 0.0 or not np.isfinite(scale):
        conditions["nonzero"] = False
        conditions["note"] = "zero direction is a null investment"
        return False, conditions
    conditions["nonzero"] = True
    xi = xi / scale
    jumps, rates = t.jump_arrays()
    v = jumps @ xi if rates.size else np.zeros(0)

    conditions["no_diffusion"] = bool(
        np.abs(t.c @ xi).max(initial=0.0) <= tol)
    conditions["no_negative_jumps"] = bool((v >= -tol).all()) if v.size else True
    if rates.size:
        small = np.linalg.norm(jumps, axis=1) <= 1.0
        trunc_drift = float(xi @ t.b - (v * small * rates).sum())
    else:
        trunc_drift = float(xi @ t.b)
    conditions["truncated_drift_nonnegative"] = bool(trunc_drift >= -tol)
    conditions["truncated_drift"] = trunc_drift

    if ns is None:
        ns = null_space(t)
    dist = ns.distance(xi)
    conditions["not_null_investment"] = bool(dist > 1e-7)
    conditions["distance_from_null"] = dist

    # stratification diagnostic: finite level a with xi in I^a needs
    # xi.b + integral of xi.x/(1+xi.x) over big jumps >= 1/a
    if rates.size:
        big = ~small
        with np.errstate(divide="ignore", invalid="ignore"):
            z4 = float(xi @ t.b + np.where(big, v / (1.0 + v), 0.0) @ rates)
    else:
        z4 = float(xi @ t.b)
    conditions["z4_value"] = z4

    verdict = (conditions["no_diffusion"]
               and conditions["no_negative_jumps"]
               and conditions["truncated_drift_nonnegative"]
               and conditions["not_null_investment"])
    return verdict, conditions


def detect_uip(t: Triplet, c: ConstraintSet, tol: float = TOL) -> NuipReport:
    """Search the recession cone for an immediate-arbitrage direction.

    LP: maximize xi.(b + sum lambda x) over xi in recession_cone(c) with
    c xi = 0, xi.x_j >= 0, truncated drift >= 0, |xi|_inf <= 1.  A strictly
    positive optimum certifies UIP and the optimizer is the witness.
    """
    d = t.d
    cone = recession_cone(c)
    jumps, rates = t.jump_arrays()
    rows = [cone.A] if cone.m else []
    if rates.size:
        norms = np.linalg.norm(jumps, axis=1)
        small = norms <= 1.0
        # each row/objective atom is rescaled to unit size: the constraints
        # are homogeneous and the objective stays a positive combination of
        # feasibility-nonnegative terms, so the verdict is unchanged while
        # the LP coefficients stay solver-friendly for huge quadrature atoms
        rows.append(-jumps / np.maximum(norms, 1e-300)[:, None])
        trunc_row = -(t.b - jumps.T @ (small * rates))
        total = t.b + (jumps / np.maximum(norms, 1.0)[:, None]).T @ rates
    else:
        trunc_row = -t.b
        total = t.b
    rows.append(trunc_row.reshape(1, -1))
    A_ub = np.vstack(rows)
    b_ub = np.zeros(A_ub.shape[0])

    # equality c xi = 0, dropping zero rows
    nz = np.abs(t.c).max(axis=1) > 0
    A_eq = t.c[nz] if nz.any() else None
    b_eq = np.zeros(int(nz.sum())) if nz.any() else None

    res = linprog(-total, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(-1.0, 1.0)] * d, method="highs")
    if res.status != 0:
        raise LpFailureError(f"detection LP failed: {res.message}")
    value = float(-res.fun)
    if value > tol:
        witness = np.asarray(res.x, dtype=np.float64)
        witness = witness / np.abs(witness).max()
        ok, checks = is_immediate_arbitrage(witness, t, tol=tol)
        checks["witness_verified"] = ok
        return NuipReport(True, witness, value, checks)
    return NuipReport(False, None, value, {"witness_verified": None})
