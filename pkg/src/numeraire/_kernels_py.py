"""Pure-numpy fallback kernels; arithmetic mirrors the compiled versions.

Both backends perform identical floating-point operations in identical
order, so results are bit-equal and every test holds for either.
"""
from __future__ import annotations

import numpy as np


def compound_returns(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Multiplicative wealth from per-step simple returns.

    r : (paths, steps) -> wealth (paths, steps+1) with wealth[:, 0] = 1,
    plus first_bad : (paths,) int64, the first step whose growth factor
    1 + r is <= 0 (-1 when the path stays solvent).  Compounding continues
    past a bad step so the output is a pure function of r.
    """
    r = np.ascontiguousarray(r, dtype=np.float64)
    p, k = r.shape
    wealth = np.empty((p, k + 1))
    wealth[:, 0] = 1.0
    factors = 1.0 + r
    np.cumprod(factors, axis=1, out=wealth[:, 1:])
    bad = factors <= 0.0
    first_bad = np.where(bad.any(axis=1), bad.argmax(axis=1), -1)
    return wealth, first_bad.astype(np.int64)


def bessel_euler(z: np.ndarray, dt: float, s0: float, floor: float) -> np.ndarray:
    """Euler grid for dS = dt/S + sqrt(dt) z with a reflection guard.

    A step crossing zero is mirrored back (and held at `floor` if the
    mirror image is still closer to zero than that); a hard clamp would
    park paths where the dt/S drift explodes.
    z : (paths, steps) standard normals -> S : (paths, steps+1).
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    p, k = z.shape
    sqdt = np.sqrt(dt)
    out = np.empty((p, k + 1))
    s = np.full(p, float(s0))
    out[:, 0] = s
    for j in range(k):
        s = (s + dt / s) + sqdt * z[:, j]
        np.abs(s, out=s)
        np.maximum(s, floor, out=s)
        out[:, j + 1] = s
    return out
