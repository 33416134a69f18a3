"""Growth-optimal (numeraire) portfolio: evaluation, solving, certification.

Per segment the solver maximizes the concave growth rate

    g(pi) = pi.b - pi.c.pi/2 + sum_j [log(1+pi.x_j) - pi.x_j 1{|x_j|<=1}] lambda_j

over C intersected with the natural constraints and the orthogonal
complement of the null-investment subspace.  The optimum rho is certified
through rel(pi|rho) <= 0 over test directions, and X-integrability of rho is
decided by integrating the psi record against the clock.
"""
from __future__ import annotations

import collections
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _philox
from .arbitrage import NuipReport, detect_uip
from .constraints import (ConstraintSet, cone_rays, intersect,
                          natural_constraints, null_space, polyhedron_vertices,
                          project, recession_cone)
from .market import (IntegralResult, MarketSpec, Triplet, clock_integral,
                     validate_market)

__all__ = [
    "Portfolio",
    "SolverOptions",
    "SegmentSolution",
    "NumeraireSolution",
    "Certificate",
    "UipFoundError",
    "NonconvergenceError",
    "LadderNonconvergenceError",
    "InvalidMarketError",
    "growth_rate",
    "growth_gradient",
    "rel_rate",
    "psi_rho",
    "is_admissible",
    "solve_segment",
    "solve_numeraire",
    "verify_solution",
]


def _vec(pi) -> np.ndarray:
    if isinstance(pi, Portfolio):
        return pi.pi
    return np.atleast_1d(np.asarray(pi, dtype=np.float64))


@dataclass(eq=False)
class Portfolio:
    """Wealth proportions per asset."""

    pi: np.ndarray

    def __post_init__(self) -> None:
        self.pi = np.atleast_1d(np.asarray(self.pi, dtype=np.float64))


class UipFoundError(RuntimeError):
    """A segment admits unbounded increasing profit; solving is impossible."""

    def __init__(self, segment_index: int, report: NuipReport):
        self.segment_index = segment_index
        self.report = report
        super().__init__(
            f"segment {segment_index} admits unbounded increasing profit; "
            f"witness {None if report.witness is None else report.witness.tolist()}")


class NonconvergenceError(RuntimeError):
    def __init__(self, message: str, trace: dict):
        self.trace = trace
        super().__init__(message)


class LadderNonconvergenceError(RuntimeError):
    def __init__(self, trace: list):
        self.trace = trace
        super().__init__(
            f"approximation ladder did not meet its tolerance after "
            f"{len(trace)} steps")


class InvalidMarketError(ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__("market validation failed:\n" + str(report))


@dataclass
class SolverOptions:
    pg_tol: float = 1e-9          # stop when the unit projected gradient step is this short
    max_iter: int = 100_000
    armijo: float = 1e-4
    domain_floor: float = 1e-12   # keep 1 + pi.x_j at or above this
    ladder_tol: float = 1e-6      # Cauchy stop for the f_n ladder
    ladder_max: int = 65536
    check_uip: bool = True
    rel_dirs: int = 64            # random directions in the built-in certificate
    cert_tol: float = 1e-7

    def __post_init__(self) -> None:
        for name in ("pg_tol", "domain_floor", "ladder_tol", "cert_tol"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie strictly between 0 and 1")
        if not 0.0 < self.armijo < 1.0:
            raise ValueError("armijo must lie strictly between 0 and 1")
        for name in ("max_iter", "ladder_max", "rel_dirs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")


# --------------------------------------------------------------------------
# pointwise quantities


def is_admissible(pi, t: Triplet, margin: float = 0.0) -> bool:
    """Strict jump survival: 1 + pi.x_j > margin for every atom."""
    jumps, rates = t.jump_arrays()
    if not rates.size:
        return True
    return bool((1.0 + jumps @ _vec(pi) > margin).all())


def growth_rate(pi, t: Triplet) -> float:
    """Log-wealth drift per unit clock; -inf outside the jump-survival domain."""
    p = _vec(pi)
    jumps, rates = t.jump_arrays()
    val = float(p @ t.b - 0.5 * p @ t.c @ p)
    if rates.size:
        v = jumps @ p
        if (1.0 + v <= 0.0).any():
            return -math.inf
        small = np.linalg.norm(jumps, axis=1) <= 1.0
        val += float((np.log1p(v) - v * small) @ rates)
    return val


def growth_gradient(pi, t: Triplet) -> np.ndarray:
    p = _vec(pi)
    jumps, rates = t.jump_arrays()
    grad = t.b - t.c @ p
    if rates.size:
        v = jumps @ p
        if (1.0 + v <= 0.0).any():
            raise ValueError("portfolio outside the jump-survival domain")
        small = np.linalg.norm(jumps, axis=1) <= 1.0
        grad = grad + jumps.T @ (rates / (1.0 + v)) - jumps.T @ (rates * small)
    return grad


def rel_rate(pi, rho, t: Triplet) -> float:
    """Drift rate of W^pi/W^rho; rho must be admissible.  May return +inf."""
    p, r = _vec(pi), _vec(rho)
    jumps, rates = t.jump_arrays()
    diff = p - r
    val = float(diff @ t.b - diff @ t.c @ r)
    if rates.size:
        vr = jumps @ r
        if (1.0 + vr <= 0.0).any():
            raise ValueError("reference portfolio inadmissible")
        vd = jumps @ diff
        small = np.linalg.norm(jumps, axis=1) <= 1.0
        # theta(x) = (1+pi.x)/(1+rho.x) - 1 - (pi-rho).x 1{|x|<=1}
        theta = vd / (1.0 + vr) - vd * small
        val += float(theta @ rates)
    return val


def psi_rho(rho, t: Triplet) -> dict:
    """Integrability record of rho against this triplet.

    psi = psi1 + |psi2| integrates to the clock-total that decides
    X-integrability; the psi_hat fields are the per-part diagnostics.
    """
    r = _vec(rho)
    jumps, rates = t.jump_arrays()
    if rates.size:
        v = jumps @ r
        big = np.linalg.norm(jumps, axis=1) > 1.0
        vbig = np.abs(v) > 1.0
        psi1 = float(rates[v > 1.0].sum())
        psi2 = float(r @ t.b + (v * (big.astype(float) - vbig.astype(float))) @ rates)
        hat2 = float(np.minimum(1.0, v * v) @ rates)
    else:
        psi1, hat2 = 0.0, 0.0
        psi2 = float(r @ t.b)
    hat1 = float(r @ t.c @ r)
    return {"psi1": psi1, "psi2": psi2, "psi": psi1 + abs(psi2),
            "psi_hat1": hat1, "psi_hat2": hat2, "psi_hat3": psi2}


# --------------------------------------------------------------------------
# segment solve (projected gradient ascent)


@dataclass(eq=False)
class SegmentSolution:
    rho: np.ndarray
    g_value: float
    trace: dict
    triplet: Triplet           # the triplet actually solved (final ladder rung)
    psi: dict = field(default_factory=dict)
    nuip: NuipReport | None = None
    approx_trace: list | None = None  # [(n, rho_n), ...] when the ladder ran


def _feasible_polyhedron(t: Triplet, c: ConstraintSet) -> ConstraintSet:
    poly = intersect(c, natural_constraints(t.nu, t.d))
    ns = null_space(t)
    if ns.dim:
        # pin the null component to zero: the optimizer works on C (int) N-perp
        rows = np.vstack([ns.basis, -ns.basis])
        poly = intersect(poly, ConstraintSet(rows, np.zeros(rows.shape[0])))
    return poly


def _interior_start(poly: ConstraintSet, jumps: np.ndarray,
                    floor: float) -> np.ndarray:
    """Feasible point with the largest jump-survival margin (LP), used only
    when the projected origin sits on the survival boundary."""
    from scipy.optimize import linprog

    d = poly.d
    n_j = jumps.shape[0]
    # variables (p, s): maximize s subject to A p <= u, -jumps p + s <= 1, s <= 1
    A = np.zeros((poly.m + n_j + 1, d + 1))
    ub = np.zeros(poly.m + n_j + 1)
    A[:poly.m, :d] = poly.A
    ub[:poly.m] = poly.u
    A[poly.m:poly.m + n_j, :d] = -jumps
    A[poly.m:poly.m + n_j, d] = 1.0
    ub[poly.m:poly.m + n_j] = 1.0
    A[-1, d] = 1.0
    ub[-1] = 1.0
    cost = np.zeros(d + 1)
    cost[d] = -1.0
    res = linprog(cost, A_ub=A, b_ub=ub,
                  bounds=[(-1e8, 1e8)] * d + [(None, None)], method="highs")
    if res.status != 0 or res.x[d] <= floor:
        raise ValueError("no admissible portfolio with positive jump margin")
    return np.asarray(res.x[:d], dtype=np.float64)


def solve_segment(t: Triplet, c: ConstraintSet, opts: SolverOptions | None = None,
                  x0=None) -> SegmentSolution:
    """Maximize g over C (int) C0 (int) N-perp by spectral projected gradient.

    Barzilai-Borwein initial step, backtracking halving line search against a
    nonmonotone reference (Armijo 1e-4 over the best of the last 10 accepted
    values -- a monotone search cripples the spectral step on badly
    conditioned quadratics), domain guard 1 + pi.x_j >= domain_floor, start
    at the projection of 0.
    """
    opts = opts or SolverOptions()
    if opts.check_uip:
        rep = detect_uip(t, c)
        if rep.uip_exists:
            raise UipFoundError(-1, rep)
    jumps, _ = t.jump_arrays()
    poly = _feasible_polyhedron(t, c)
    x = project(poly, np.zeros(t.d) if x0 is None else _vec(x0))
    if jumps.size and (1.0 + jumps @ x <= opts.domain_floor).any():
        x = _interior_start(poly, jumps, opts.domain_floor)

    g0 = growth_rate(x, t)
    if not math.isfinite(g0):
        raise ValueError("no finite starting value inside the domain")
    alpha = 0.0
    g_evals = 1
    pg = math.inf
    x_prev: np.ndarray | None = None
    grad_prev: np.ndarray | None = None
    g_hist = collections.deque([g0], maxlen=10)
    for it in range(opts.max_iter):
        grad = growth_gradient(x, t)
        gnorm = float(np.linalg.norm(grad))
        xp = project(poly, x + grad)
        pg = float(np.linalg.norm(x - xp))
        if pg <= opts.pg_tol:
            trace = {"iterations": it, "pg_norm": pg, "g_evals": g_evals,
                     "converged": True}
            return SegmentSolution(rho=x, g_value=g0, trace=trace, triplet=t)
        if np.abs(x).max(initial=0.0) > 1e8:
            raise NonconvergenceError(
                "iterates diverge; the objective may be unbounded on C",
                {"iterations": it, "pg_norm": pg, "norm": float(np.abs(x).max())})
        if x_prev is not None:
            s = x - x_prev
            y = grad_prev - grad          # curvature along s (>= 0 for concave g)
            sy = float(s @ y)
            if sy > 0.0:
                alpha = min(float(s @ s) / sy, 1e8)
        elif alpha == 0.0:
            alpha = 1.0 / max(1.0, gnorm)   # unit-length first trial step
        x_prev, grad_prev = x, grad
        g_ref = min(g_hist)    # worst recent value: permits transient dips
        halvings = 0
        while True:
            cand = project(poly, x + alpha * grad)
            step = cand - x
            ok_domain = (not jumps.size) or bool(
                (1.0 + jumps @ cand >= opts.domain_floor).all())
            if ok_domain:
                g_cand = growth_rate(cand, t)
                g_evals += 1
                if g_cand >= g_ref + opts.armijo * float(grad @ step):
                    x, g0 = cand, g_cand
                    g_hist.append(g_cand)
                    break
            alpha *= 0.5
            halvings += 1
            if alpha * gnorm < 1e-16 * (1.0 + float(np.linalg.norm(x))):
                raise NonconvergenceError(
                    "line search stalled before reaching the projected-gradient "
                    "tolerance", {"iterations": it, "pg_norm": pg,
                                  "g_evals": g_evals})
    raise NonconvergenceError(
        "iteration cap reached", {"iterations": opts.max_iter, "pg_norm": pg,
                                  "g_evals": g_evals})


# --------------------------------------------------------------------------
# market-level solve


@dataclass(eq=False)
class NumeraireSolution:
    segments: tuple[SegmentSolution, ...]
    integral: IntegralResult
    integrable: bool
    rel_cert: float
    market: MarketSpec

    @property
    def rho(self) -> list[np.ndarray]:
        return [s.rho for s in self.segments]

    def rho_per_interval(self) -> np.ndarray:
        out = np.zeros((self.market.clock.n_intervals, self.market.d))
        for seg_spec, seg_sol in zip(self.market.segments, self.segments):
            out[seg_spec.from_idx:seg_spec.to_idx] = seg_sol.rho
        return out

    def psi_per_interval(self) -> np.ndarray:
        out = np.zeros(self.market.clock.n_intervals)
        for seg_spec, seg_sol in zip(self.market.segments, self.segments):
            out[seg_spec.from_idx:seg_spec.to_idx] = seg_sol.psi["psi"]
        return out

    def to_dict(self) -> dict:
        return {
            "segments": [
                {
                    "rho": s.rho.tolist(),
                    "g_value": s.g_value,
                    "psi": s.psi,
                    "trace": s.trace,
                    "approx_trace": (None if s.approx_trace is None else
                                     [{"n": n, "rho": r.tolist()}
                                      for n, r in s.approx_trace]),
                }
                for s in self.segments
            ],
            "integrable": self.integrable,
            "psi_total": self.integral.total,
            "psi_diverged": self.integral.diverged,
            "rel_cert": self.rel_cert,
        }


def _divergence_trend(psi_vals: np.ndarray, m: MarketSpec) -> bool:
    """Endpoint growth heuristic: psi blowing up toward the horizon.

    Compares the last interval's rate against the rate at roughly 16x the
    distance from the horizon; a ratio above 10 marks the integral as
    effectively divergent even though every partial sum is finite.
    """
    k = psi_vals.size
    if k < 8:
        return False
    times = m.clock.times
    horizon = times[-1]
    mid = 0.5 * (times[:-1] + times[1:])
    dist = horizon - mid
    far = np.nonzero(dist >= 16.0 * dist[-1])[0]
    if far.size == 0:
        return False
    ref = psi_vals[far[-1]]
    last = psi_vals[-1]
    if ref <= 0.0:
        return bool(last > 1.0)
    return bool(last / ref > 10.0)


def solve_numeraire(m: MarketSpec, c: ConstraintSet,
                    opts: SolverOptions | None = None) -> NumeraireSolution:
    """Solve every segment, run the f_n ladder where the jump tail requires
    it, and attach the integrability verdict and rel certificate."""
    opts = opts or SolverOptions()
    report = validate_market(m)
    if not report.ok:
        raise InvalidMarketError(report)
    if c.d != m.d:
        raise ValueError("constraint dimension does not match the market")

    inner = replace(opts, check_uip=False)
    solutions: list[SegmentSolution] = []
    for idx, seg in enumerate(m.segments):
        t = seg.triplet
        gate = detect_uip(t, c)
        if gate.uip_exists:
            raise UipFoundError(idx, gate)
        if t.nu.needs_ladder:
            trace: list = []
            sol = None
            x_start = None
            n = 1
            converged = False
            while n <= opts.ladder_max:
                t_n = Triplet(t.b, t.c, t.nu.with_approx(n), t.dG_jump)
                sol = solve_segment(t_n, c, inner, x0=x_start)
                trace.append((n, sol.rho))
                if len(trace) >= 2:
                    prev = trace[-2][1]
                    if float(np.abs(sol.rho - prev).max()) <= opts.ladder_tol:
                        converged = True
                        break
                x_start = sol.rho
                n *= 2
            if not converged:
                raise LadderNonconvergenceError(trace)
            sol.approx_trace = trace
        else:
            sol = solve_segment(t, c, inner)
        sol.nuip = gate
        sol.psi = psi_rho(sol.rho, sol.triplet)
        solutions.append(sol)

    psi_vals = np.array([0.0] * m.clock.n_intervals)
    for seg_spec, seg_sol in zip(m.segments, solutions):
        psi_vals[seg_spec.from_idx:seg_spec.to_idx] = seg_sol.psi["psi"]
    integral = clock_integral(psi_vals, m.clock,
                              increments=m.effective_increments)
    integrable = not (integral.diverged or m.psi_divergent
                      or _divergence_trend(psi_vals, m))

    partial = NumeraireSolution(tuple(solutions), integral, integrable,
                                rel_cert=math.nan, market=m)
    cert = verify_solution(partial, m, c, n_dirs=opts.rel_dirs)
    partial.rel_cert = cert.max_rel
    return partial


# --------------------------------------------------------------------------
# certification


@dataclass(eq=False)
class Certificate:
    max_rel: float
    argmax: np.ndarray | None
    per_segment: list
    n_evaluated: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel <= self.tol


def _candidate_portfolios(rho: np.ndarray, t: Triplet, poly: ConstraintSet,
                          n_dirs: int, floor: float) -> list[np.ndarray]:
    jumps, _ = t.jump_arrays()
    d = rho.size

    def _admissible_blend(target: np.ndarray) -> np.ndarray:
        # walk from rho toward target, stopping before jump survival fails
        if not jumps.size:
            return target
        vr = 1.0 + jumps @ rho
        vd = jumps @ (target - rho)
        neg = vd < 0
        if not neg.any():
            return target
        s_max = float(np.min(vr[neg] / -vd[neg]))
        s = min(1.0, 0.95 * s_max)
        return rho + s * (target - rho)

    cands = [rho]
    if d <= 4 and 0 < poly.m <= 24:
        for v in polyhedron_vertices(poly):
            cands.append(_admissible_blend(v))
    rays = cone_rays(recession_cone(poly), limit=1024)
    for ray in np.asarray(rays):
        cands.append(_admissible_blend(rho + ray))
    if n_dirs > 0:
        u = _philox.uniform_grid(0, _philox.TAG_DIRECTIONS, 0, n_dirs, 0, 1, d)
        z = _philox.normals_from_uniforms(u)[:, 0, :]
        for k in range(n_dirs):
            target = project(poly, rho + 0.5 * z[k])
            cands.append(_admissible_blend(target))
    out = []
    for p in cands:
        if not jumps.size or (1.0 + jumps @ p > floor).all():
            out.append(p)
    return out


def verify_solution(sol: NumeraireSolution, m: MarketSpec, c: ConstraintSet,
                    n_dirs: int = 64, tol: float = 1e-7) -> Certificate:
    """Evaluate rel(pi|rho) over vertices, recession rays, and random feasible
    candidates; the certificate passes when the maximum stays at or below tol.

    Candidate generation is deterministic (fixed stream), so certificates are
    reproducible.
    """
    worst = -math.inf
    arg = None
    per_segment = []
    total = 0
    for seg_sol in sol.segments:
        t = seg_sol.triplet
        poly = _feasible_polyhedron(t, c)
        seg_worst = -math.inf
        for p in _candidate_portfolios(seg_sol.rho, t, poly, n_dirs, 1e-12):
            r = rel_rate(p, seg_sol.rho, t)
            total += 1
            if r > seg_worst:
                seg_worst = r
                if r > worst:
                    worst, arg = r, p
        per_segment.append(seg_worst)
    return Certificate(max_rel=worst, argmax=arg, per_segment=per_segment,
                       n_evaluated=total, tol=tol)
