"""Polyhedral constraint geometry: user constraints, natural constraints,
recession cones, null-investment subspaces, Euclidean projection.

Every set here is {p : A p <= u}.  All operations are pure and the types
immutable, so values can be shared freely across threads.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable

import numpy as np
from scipy.linalg import qr
from scipy.optimize import linprog, minimize

from .market import JumpMeasure, Triplet, _readonly

__all__ = [
    "ConstraintSet",
    "NullSpace",
    "InfeasibleConstraintsError",
    "natural_constraints",
    "intersect",
    "recession_cone",
    "null_space",
    "project",
    "contains",
    "constraints_from_json",
    "constraints_to_json",
    "polyhedron_vertices",
    "cone_rays",
]

PRESETS = ("unconstrained", "long-only", "simplex")


class InfeasibleConstraintsError(ValueError):
    """The polyhedron {Ap <= u} is empty."""


@dataclass(eq=False)
class ConstraintSet:
    """The polyhedron {p in R^d : A p <= u}; is_cone asserts u = 0."""

    A: np.ndarray
    u: np.ndarray
    is_cone: bool = False

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError("A must be a matrix (possibly with zero rows)")
        u = np.atleast_1d(np.asarray(self.u, dtype=np.float64))
        if u.shape != (A.shape[0],):
            raise ValueError("u length must match the rows of A")
        if self.is_cone and u.size and np.abs(u).max() != 0.0:
            raise ValueError("a cone requires u = 0")
        self.A = _readonly(A)
        self.u = _readonly(u)
        self.is_cone = bool(self.is_cone)

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    # ------------------------------------------------------------------
    @classmethod
    def full_space(cls, d: int) -> "ConstraintSet":
        return cls(np.zeros((0, d)), np.zeros(0), is_cone=True)

    @classmethod
    def from_preset(cls, name: str, d: int) -> "ConstraintSet":
        if name == "unconstrained":
            return cls.full_space(d)
        if name == "long-only":
            return cls(-np.eye(d), np.zeros(d), is_cone=True)
        if name == "simplex":
            A = np.vstack([-np.eye(d), np.ones((1, d))])
            u = np.concatenate([np.zeros(d), [1.0]])
            return cls(A, u, is_cone=False)
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")

    def nonempty(self) -> bool:
        if self.m == 0:
            return True
        res = linprog(np.zeros(self.d), A_ub=self.A, b_ub=self.u,
                      bounds=[(None, None)] * self.d, method="highs")
        return res.status == 0


def natural_constraints(nu: JumpMeasure, d: int) -> ConstraintSet:
    """Portfolios keeping every jump survivable: p^T x_j >= -1 for all atoms."""
    if not nu.atoms:
        return ConstraintSet.full_space(d)
    jumps, _ = nu.arrays(d)
    return ConstraintSet(-jumps, np.ones(jumps.shape[0]), is_cone=False)


def intersect(c1: ConstraintSet, c2: ConstraintSet) -> ConstraintSet:
    if c1.d != c2.d:
        raise ValueError("dimension mismatch")
    return ConstraintSet(np.vstack([c1.A, c2.A]),
                         np.concatenate([c1.u, c2.u]),
                         is_cone=c1.is_cone and c2.is_cone)


def recession_cone(c: ConstraintSet) -> ConstraintSet:
    return ConstraintSet(c.A, np.zeros(c.m), is_cone=True)


def contains(c: ConstraintSet, p, tol: float = 1e-9) -> bool:
    p = np.asarray(p, dtype=np.float64)
    if c.m == 0:
        return True
    return bool(np.all(c.A @ p <= c.u + tol))


# --------------------------------------------------------------------------
# projection (dual active-set; the QP Hessian is the identity)


def project(c: ConstraintSet, p, tol: float = 1e-10) -> np.ndarray:
    """Euclidean projection of p onto {Ap <= u}.

    Active-set iteration on the dual: x = p - A_W^T lam with lam >= 0 solving
    (A_W A_W^T) lam = A_W p - u_W for the working set W.  Raises
    InfeasibleConstraintsError when the polyhedron is empty.
    """
    p = np.asarray(p, dtype=np.float64).copy()
    if c.m == 0:
        return p
    A, u = c.A, c.u
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 0
    if not keep.all():
        if np.any(u[~keep] < -tol):
            raise InfeasibleConstraintsError("zero row with negative bound")
        A, u, norms = A[keep], u[keep], norms[keep]
        if A.shape[0] == 0:
            return p
    scale = 1.0 + float(np.abs(p).max(initial=0.0))
    active: list[int] = []
    x = p.copy()
    max_outer = 100 * (A.shape[0] + c.d + 1)
    prev_state: tuple | None = None
    for _ in range(max_outer):
        viol = (A @ x - u) / norms
        worst = int(np.argmax(viol))
        if viol[worst] <= tol * scale:
            return x
        state = (tuple(active), worst)
        if state == prev_state:
            break  # degenerate working set repeats: defer to the dual solve
        prev_state = state
        if worst not in active:
            active.append(worst)
        for _ in range(len(A) + c.d + 1):
            Aw = A[active]
            G = Aw @ Aw.T
            rhs = Aw @ p - u[active]
            lam = np.linalg.lstsq(G, rhs, rcond=None)[0]
            if lam.size == 0 or lam.min() >= -tol:
                break
            del active[int(np.argmin(lam))]
        if active:
            x = p - A[active].T @ lam
        else:
            x = p.copy()
    x = _dual_projection(A, u, p)
    if np.all((A @ x - u) / norms <= tol * scale):
        return x
    # no convergence: either empty polyhedron or numerical trouble
    check = ConstraintSet(A, u)
    if not check.nonempty():
        raise InfeasibleConstraintsError("cannot project onto an empty set")
    raise RuntimeError("projection active-set iteration did not converge")


def _dual_projection(A: np.ndarray, u: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Projection via the dual bound-constrained QP, for degenerate row sets.

    The dual of min ||x - p||^2 over {Ax <= u} is
    min 0.5 lam' A A' lam - (Ap - u)' lam over lam >= 0, with x = p - A' lam.
    The dual optimum identifies the active rows; the returned point is then
    re-projected exactly onto an independent subset of them.
    """
    m = A.shape[0]
    G = A @ A.T
    bt = A @ p - u

    def fg(lam: np.ndarray) -> tuple[float, np.ndarray]:
        glam = G @ lam
        return 0.5 * float(lam @ glam) - float(bt @ lam), glam - bt

    res = minimize(fg, np.zeros(m), jac=True, method="L-BFGS-B",
                   bounds=[(0.0, None)] * m,
                   options={"maxiter": 1000, "ftol": 1e-18, "gtol": 1e-14})
    lam_scale = max(1.0, float(np.abs(res.x).max(initial=0.0)))
    act = [int(i) for i in np.where(res.x > 1e-12 * lam_scale)[0]]
    for _ in range(len(act) + 1):
        if not act:
            return p.copy()
        # keep an independent subset of the candidate rows (pivoted QR)
        _, r, piv = qr(A[act].T, pivoting=True, mode="economic")
        diag = np.abs(np.diag(r))
        rank = int((diag > 1e-12 * max(float(diag.max(initial=0.0)), 1e-300)).sum())
        act = [act[int(j)] for j in piv[:rank]]
        Aw = A[act]
        lam = np.linalg.solve(Aw @ Aw.T, Aw @ p - u[act])
        if lam.size == 0 or lam.min() >= -1e-12:
            return p - Aw.T @ lam
        del act[int(np.argmin(lam))]
    return p - Aw.T @ lam


# --------------------------------------------------------------------------
# null investments


@dataclass(eq=False)
class NullSpace:
    """Directions with no effect on wealth: kernel of [c; x_j rows; b]."""

    basis: np.ndarray                # (k, d) orthonormal rows, possibly k = 0
    projector_complement: np.ndarray  # projection onto the orthogonal complement

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def component(self, p) -> np.ndarray:
        """The part of p lying inside N."""
        if self.dim == 0:
            return np.zeros_like(np.asarray(p, dtype=np.float64))
        return self.basis.T @ (self.basis @ np.asarray(p, dtype=np.float64))

    def distance(self, p) -> float:
        p = np.asarray(p, dtype=np.float64)
        return float(np.linalg.norm(p - self.component(p)))


def null_space(t: Triplet, cutoff: float = 1e-10) -> NullSpace:
    jumps, _ = t.jump_arrays()
    stack = np.vstack([t.c, jumps, t.b.reshape(1, -1)])
    d = t.d
    if not np.any(stack):
        basis = np.eye(d)
    else:
        _, s, vt = np.linalg.svd(stack)
        rank = int(np.sum(s > cutoff * s[0]))
        basis = vt[rank:]
    proj = np.eye(d) - basis.T @ basis
    return NullSpace(basis=_readonly(basis),
                     projector_complement=_readonly(proj))


# --------------------------------------------------------------------------
# JSON and enumeration helpers


def constraints_from_json(text: str) -> ConstraintSet:
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("constraints: expected an object")
    unknown = set(doc) - {"A", "u", "is_cone"}
    if unknown:
        raise ValueError(f"constraints: unknown fields {sorted(unknown)}")
    for k in ("A", "u", "is_cone"):
        if k not in doc:
            raise ValueError(f"constraints: missing field {k!r}")
    A = np.asarray(doc["A"], dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(0, 0) if A.size == 0 else A.reshape(1, -1)
    return ConstraintSet(A, np.asarray(doc["u"], dtype=np.float64),
                         bool(doc["is_cone"]))


def constraints_to_json(c: ConstraintSet) -> str:
    return json.dumps({"A": c.A.tolist(), "u": c.u.tolist(),
                       "is_cone": c.is_cone})


def polyhedron_vertices(c: ConstraintSet, limit: int = 4096) -> np.ndarray:
    """Vertices of {Ap <= u} by basic-solution enumeration (small d only).

    Returns an array (n, d); empty when the polyhedron has no vertex or the
    enumeration budget is exceeded.
    """
    A, u, d = c.A, c.u, c.d
    if c.m < d:
        return np.zeros((0, d))
    out: list[np.ndarray] = []
    budget = limit
    for rows in combinations(range(c.m), d):
        budget -= 1
        if budget < 0:
            break
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, u[list(rows)])
        if np.all(A @ v <= u + 1e-9 * (1.0 + np.abs(v).max())):
            if not any(np.allclose(v, w, atol=1e-10) for w in out):
                out.append(v)
    return np.array(out) if out else np.zeros((0, d))


def cone_rays(c: ConstraintSet, limit: int = 4096) -> np.ndarray:
    """Extreme-ray candidates of the cone {Ap <= 0}, unit norm, deduplicated.

    For m < d the cone contains a subspace; +-basis vectors of the kernel of A
    are returned alongside edge directions from (d-1)-row subsets.
    """
    A, d = c.A, c.d
    dirs: list[np.ndarray] = []

    def _push(v: np.ndarray) -> None:
        n = np.linalg.norm(v)
        if n < 1e-12:
            return
        v = v / n
        if np.all(A @ v <= 1e-10):
            if not any(np.allclose(v, w, atol=1e-9) for w in dirs):
                dirs.append(v)

    if c.m == 0:
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            _push(e)
            _push(-e)
        return np.array(dirs)
    # subspace part: kernel of A
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-12 * s[0])) if s.size else 0
    for v in vt[rank:]:
        _push(v)
        _push(-v)
    budget = limit
    for k in range(min(d - 1, c.m), 0, -1):
        for rows in combinations(range(c.m), k):
            budget -= 1
            if budget < 0:
                return np.array(dirs) if dirs else np.zeros((0, d))
            sub = A[list(rows)]
            _, s, vt = np.linalg.svd(sub)
            r = int(np.sum(s > 1e-12 * s[0])) if s.size else 0
            for v in vt[r:]:
                _push(v)
                _push(-v)
    return np.array(dirs) if dirs else np.zeros((0, d))
