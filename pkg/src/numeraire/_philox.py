"""Counter-based random stream (Philox4x64-10, vectorized over numpy arrays).

Every variate is addressed by (seed, path, step, slot, stream tag), so any
sub-rectangle of a simulation can be regenerated independently and the whole
ensemble is reproducible bit-for-bit regardless of chunking or evaluation
order.  Word-level output is pinned against numpy's Philox in the tests.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_U64 = np.uint64
_MASK32 = _U64(0xFFFFFFFF)
_M0 = _U64(0xD2E7470EE14C6C93)
_M1 = _U64(0xCA5A826395121157)
_W0 = _U64(0x9E3779B97F4A7C15)
_W1 = _U64(0xBB67AE8584CAA73B)

# tags keep independent purposes on disjoint streams
TAG_MARKET = 0
TAG_BESSEL = 1
TAG_CONTROL = 2
TAG_DIRECTIONS = 3


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def key_for_seed(seed: int) -> tuple[int, int]:
    s = int(seed) & 0xFFFFFFFFFFFFFFFF
    return _splitmix64(s), _splitmix64(_splitmix64(s) ^ 0xA5A5A5A5A5A5A5A5)


def _mulhilo(a, b):
    lo = a * b
    ah, al = a >> _U64(32), a & _MASK32
    bh, bl = b >> _U64(32), b & _MASK32
    t = al * bh + ((al * bl) >> _U64(32))
    hi = ah * bh + (t >> _U64(32)) + ((ah * bl + (t & _MASK32)) >> _U64(32))
    return hi, lo


def philox4x64(c0, c1, c2, c3, k0: int, k1: int):
    """One Philox4x64-10 block per counter cell; returns the four output words."""
    c0 = np.asarray(c0, dtype=_U64)
    c1 = np.asarray(c1, dtype=_U64)
    c2 = np.asarray(c2, dtype=_U64)
    c3 = np.asarray(c3, dtype=_U64)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.full((), k0, dtype=_U64)
    k1 = np.full((), k1, dtype=_U64)
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return c0, c1, c2, c3


def _to_uniform(word):
    # 53-bit mantissa, offset by half an ulp so the result lies in (0, 1)
    return ((word >> _U64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def _uniform_grid_reference(seed: int, tag: int, path0: int, n_paths: int,
                            step0: int, n_steps: int,
                            n_slots: int) -> np.ndarray:
    """Pure-numpy evaluation of the (step, path, block, tag) addressing."""
    k0, k1 = key_for_seed(seed)
    steps = (np.arange(step0, step0 + n_steps, dtype=np.int64)
             .astype(_U64).reshape(1, -1))
    paths = (np.arange(path0, path0 + n_paths, dtype=np.int64)
             .astype(_U64).reshape(-1, 1))
    out = np.empty((n_paths, n_steps, n_slots))
    n_blocks = (n_slots + 3) // 4
    for blk in range(n_blocks):
        words = philox4x64(steps, paths, _U64(blk), _U64(tag), k0, k1)
        for w in range(4):
            s = 4 * blk + w
            if s < n_slots:
                out[:, :, s] = _to_uniform(words[w])
    return out


def uniform_grid(seed: int, tag: int, path0: int, n_paths: int, step0: int,
                 n_steps: int, n_slots: int) -> np.ndarray:
    """Uniforms of shape (n_paths, n_steps, n_slots) addressed absolutely.

    Slot s of cell (p, k) is word s%4 of the Philox block with counter words
    (k, p, s//4, tag); the same cell always yields the same value, so any
    sub-rectangle regenerates independently of chunking.

    Steps sit in the low counter word, making each (path, block) row a
    contiguous counter run; long rows are delegated to numpy's compiled
    Philox engine (same cipher, bit-identical output, keyed and positioned
    explicitly), short ones evaluated vectorized in numpy.
    """
    if n_slots <= 0:
        return np.empty((n_paths, n_steps, 0))
    if n_steps < 32:
        return _uniform_grid_reference(seed, tag, path0, n_paths,
                                       step0, n_steps, n_slots)
    k0, k1 = key_for_seed(seed)
    key_int = k0 | (k1 << 64)
    out = np.empty((n_paths, n_steps, n_slots))
    n_blocks = (n_slots + 3) // 4
    for blk in range(n_blocks):
        hi = (blk << 128) | (tag << 192)
        live = [w for w in range(4) if 4 * blk + w < n_slots]
        for i in range(n_paths):
            # counter N-1: the engine pre-increments before the first block
            n_start = step0 | ((path0 + i) << 64) | hi
            eng = np.random.Philox(counter=(n_start - 1) % (1 << 256),
                                   key=key_int)
            raw = eng.random_raw(4 * n_steps).reshape(n_steps, 4)
            for w in live:
                out[i, :, 4 * blk + w] = _to_uniform(raw[:, w])
    return out


def normals_from_uniforms(u: np.ndarray) -> np.ndarray:
    return ndtri(u)


def poisson_from_uniforms(u: np.ndarray, rate) -> np.ndarray:
    """Poisson counts by CDF inversion; exactly one uniform per variate.

    `rate` broadcasts against `u`.  Counts are capped at a level whose tail
    probability is far below 1e-15 for the rates this library produces.
    """
    rate = np.broadcast_to(np.asarray(rate, dtype=np.float64), u.shape)
    counts = np.zeros(u.shape, dtype=np.int64)
    term = np.exp(-rate)
    cdf = term.copy()
    pending = u > cdf
    cap = int(min(200, 10 + 12 * max(1.0, float(rate.max(initial=0.0)))))
    k = 0
    while pending.any() and k < cap:
        k += 1
        term = term * rate / k
        cdf = cdf + term
        counts[pending] = k
        pending = u > cdf
    return counts
