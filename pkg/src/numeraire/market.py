"""Market model: piecewise-constant characteristic triplets on a deterministic clock.

A market is a dimension, an operational clock (a strictly increasing grid of
times), and a list of segments, each holding a triplet (b, c, nu) that is
constant on a contiguous block of clock intervals.  The jump measure nu is
always a finite list of weighted atoms; parametric tail densities enter only
through a fixed quadrature rule, optionally damped by the approximating
factors f_n(x) = min(1, |x|^(-1/n)) used by the solver's outer ladder.

All container types are plain dataclasses whose array fields are set
read-only at construction; instances are safe to share across threads.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "OperationalClock",
    "JumpAtom",
    "DensitySpec",
    "JumpMeasure",
    "Triplet",
    "Segment",
    "MarketSpec",
    "Check",
    "ValidationReport",
    "IntegralResult",
    "validate_triplet",
    "validate_market",
    "drift_rate",
    "discretize_density",
    "clock_integral",
    "market_from_json",
    "market_to_json",
    "load_market",
]

# Magnitudes above exp(LOG_R_CAP) are not representable as useful atoms (the
# admissible cone would collapse numerically), so unbounded supports are
# discretized on log-magnitude in [log x_min, LOG_R_CAP].
LOG_R_CAP = 46.0


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


# --------------------------------------------------------------------------
# clock


@dataclass(eq=False)
class OperationalClock:
    """Deterministic time grid t_0 = 0 < t_1 < ... < t_K."""

    times: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("clock needs at least two times")
        if t[0] != 0.0:
            raise ValueError("clock must start at 0")
        if not np.all(np.diff(t) > 0):
            raise ValueError("clock times must be strictly increasing")
        if not np.all(np.isfinite(t)):
            raise ValueError("clock times must be finite")
        self.times = _readonly(t)

    @property
    def n_intervals(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.times)


# --------------------------------------------------------------------------
# jump measures


@dataclass(eq=False)
class JumpAtom:
    """One jump of displacement x arriving with the given intensity (per unit clock)."""

    x: np.ndarray
    intensity: float

    def __post_init__(self) -> None:
        self.x = _readonly(np.atleast_1d(self.x))
        self.intensity = float(self.intensity)
        if self.x.ndim != 1:
            raise ValueError("atom displacement must be a vector")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("atom displacement must be finite")
        if not (self.intensity > 0 and math.isfinite(self.intensity)):
            raise ValueError("atom intensity must be positive and finite")


@dataclass(eq=False)
class _Family:
    """A radial density family p(r) = scale * kernel(r) on magnitudes r."""

    kernel: Callable[[np.ndarray, float], np.ndarray]
    check_params: Callable[[float, float], str | None]  # (shape, x_min) -> error
    raw_mass_finite: Callable[[float], bool]   # mass of the untruncated tail
    raw_log_finite: Callable[[float], bool]    # integral of log r over {r>1}
    raw_mean_finite: Callable[[float], bool]   # integral of r over {r>1}
    shape_key: str


_FAMILIES: dict[str, _Family] = {
    # p(r) = scale * r^(-(1+alpha)); every log-moment is finite for alpha > 0
    "pareto": _Family(
        kernel=lambda r, a: r ** (-(1.0 + a)),
        check_params=lambda a, lo: (
            "alpha must be > 0" if not a > 0 else
            "x_min must be > 0" if not lo > 0 else None),
        raw_mass_finite=lambda a: True,
        raw_log_finite=lambda a: True,
        raw_mean_finite=lambda a: a > 1,
        shape_key="alpha",
    ),
    # p(r) = scale / (r * (log r)^beta): mass finite iff beta > 1, log-moment
    # finite iff beta > 2, |x|-moment never finite on an unbounded support
    "pareto_log": _Family(
        kernel=lambda r, b: 1.0 / (r * np.log(r) ** b),
        check_params=lambda b, lo: (
            "beta must be > 0" if not b > 0 else
            "x_min must be > 1" if not lo > 1 else None),
        raw_mass_finite=lambda b: b > 1,
        raw_log_finite=lambda b: b > 2,
        raw_mean_finite=lambda b: False,
        shape_key="beta",
    ),
}


@dataclass(eq=False)
class DensitySpec:
    """Radial jump density along a fixed direction, truncated to [x_min, x_max].

    x_max may be inf; the tail is then classified symbolically by family and
    shape parameter, and quadrature is capped at magnitude exp(LOG_R_CAP).
    """

    family: str
    scale: float
    shape: float
    direction: np.ndarray
    x_min: float
    x_max: float
    quad_nodes: int
    two_sided: bool = False

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown density family {self.family!r}")
        fam = _FAMILIES[self.family]
        self.scale = float(self.scale)
        self.shape = float(self.shape)
        self.x_min = float(self.x_min)
        self.x_max = float(self.x_max)
        self.quad_nodes = int(self.quad_nodes)
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("scale must be positive and finite")
        err = fam.check_params(self.shape, self.x_min)
        if err:
            raise ValueError(err)
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.quad_nodes < 8:
            raise ValueError("quad_nodes must be >= 8")
        d = np.atleast_1d(np.asarray(self.direction, dtype=np.float64))
        nrm = float(np.linalg.norm(d))
        if not (nrm > 0 and np.all(np.isfinite(d))):
            raise ValueError("direction must be a finite nonzero vector")
        self.direction = _readonly(d / nrm)

    # symbolic tail classification (refers to the spec as written, including
    # its truncation; a finite x_max makes every moment finite)
    def mass_finite(self) -> bool:
        if math.isfinite(self.x_max):
            return True
        return _FAMILIES[self.family].raw_mass_finite(self.shape)

    def integrates_log(self) -> bool:
        if math.isfinite(self.x_max):
            return True
        return _FAMILIES[self.family].raw_log_finite(self.shape)

    def mean_finite(self) -> bool:
        if math.isfinite(self.x_max):
            return True
        return _FAMILIES[self.family].raw_mean_finite(self.shape)


def discretize_density(spec: DensitySpec, n: float) -> list[JumpAtom]:
    """Quadrature atoms for f_n * density; n = inf means the raw density.

    Gauss-Legendre in s = log r on [log x_min, min(log x_max, LOG_R_CAP)].
    The node set is independent of n, so for a fixed node the weight is
    nondecreasing in n and reaches the raw weight at n = inf.
    """
    if not (n == math.inf or (float(n).is_integer() and n >= 1)):
        raise ValueError("approximation index must be a positive integer or inf")
    if n == math.inf and not spec.mass_finite():
        raise ValueError(
            "raw density has infinite mass; only finite approximation "
            "indices are defined for this spec")
    fam = _FAMILIES[spec.family]
    s_lo = math.log(spec.x_min)
    s_hi = min(math.log(spec.x_max) if math.isfinite(spec.x_max) else math.inf,
               LOG_R_CAP)
    if not s_hi > s_lo:
        raise ValueError("truncation interval is empty after capping")
    nodes, glw = np.polynomial.legendre.leggauss(spec.quad_nodes)
    s = 0.5 * (s_hi - s_lo) * (nodes + 1.0) + s_lo
    w = 0.5 * (s_hi - s_lo) * glw
    r = np.exp(s)
    base = spec.scale * fam.kernel(r, spec.shape) * r * w  # dr = r ds
    if n == math.inf:
        damp = np.ones_like(r)
    else:
        damp = np.where(r <= 1.0, 1.0, r ** (-1.0 / float(n)))
    weights = base * damp
    atoms = []
    for ri, wi in zip(r, weights):
        if wi <= 0.0:
            continue
        atoms.append(JumpAtom(x=ri * spec.direction, intensity=wi))
        if spec.two_sided:
            atoms.append(JumpAtom(x=-ri * spec.direction, intensity=wi))
    return atoms


@dataclass(eq=False)
class JumpMeasure:
    """Finite atomic jump measure, optionally backed by a density spec.

    `atoms` always holds the working atom list (explicit atoms plus the
    current discretization of `density` at index `approx_n`).
    """

    explicit: tuple[JumpAtom, ...] = ()
    density: DensitySpec | None = None
    approx_n: float | None = None
    atoms: tuple[JumpAtom, ...] = field(init=False)

    def __post_init__(self) -> None:
        self.explicit = tuple(self.explicit)
        if self.density is None:
            self.approx_n = None
            self.atoms = self.explicit
        else:
            if self.approx_n is None:
                self.approx_n = math.inf if self.density.integrates_log() else 1
            self.atoms = self.explicit + tuple(
                discretize_density(self.density, self.approx_n))
        d = {a.x.size for a in self.atoms}
        if len(d) > 1:
            raise ValueError("atoms have inconsistent dimensions")

    def with_approx(self, n: float) -> "JumpMeasure":
        """Same measure rebuilt at approximation index n (requires a density)."""
        if self.density is None:
            raise ValueError("measure has no density source")
        return JumpMeasure(self.explicit, self.density, n)

    @property
    def needs_ladder(self) -> bool:
        return self.density is not None and not self.density.integrates_log()

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def arrays(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """(jumps, rates): stacked displacements (J, d) and intensities (J,)."""
        if not self.atoms:
            return np.zeros((0, d)), np.zeros(0)
        return (np.stack([a.x for a in self.atoms]),
                np.array([a.intensity for a in self.atoms]))


# --------------------------------------------------------------------------
# triplets and markets


@dataclass(eq=False)
class Triplet:
    """Characteristics per unit of operational clock.

    b: drift of the canonically truncated increments (jumps of size |x| <= 1
    included, larger ones excluded); c: covariance rate, symmetric PSD;
    nu: jump intensity measure; dG_jump > 0 marks a clock-jump segment whose
    intervals each carry clock mass dG_jump instead of the time increment.
    """

    b: np.ndarray
    c: np.ndarray
    nu: JumpMeasure = field(default_factory=JumpMeasure)
    dG_jump: float = 0.0

    def __post_init__(self) -> None:
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim == 0:
            c = c.reshape(1, 1)
        if b.ndim != 1 or c.shape != (b.size, b.size):
            raise ValueError("b must be a vector and c a matching square matrix")
        # normalize c in place when it is PSD up to round-off; gross failures
        # are left for validate_triplet to report
        if np.all(np.isfinite(c)):
            asym = np.abs(c - c.T).max(initial=0.0)
            if 0 < asym <= 1e-8 * (1.0 + np.abs(c).max()):
                c = 0.5 * (c + c.T)
            if np.allclose(c, c.T):
                evals, evecs = np.linalg.eigh(c)
                tol = 1e-10 * (1.0 + max(evals.max(initial=0.0), 0.0))
                if evals.min(initial=0.0) < 0 and evals.min() >= -tol:
                    c = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
                    c = 0.5 * (c + c.T)
        self.b = _readonly(b)
        self.c = _readonly(c)
        self.dG_jump = float(self.dG_jump)
        if self.dG_jump < 0:
            raise ValueError("dG_jump must be nonnegative")

    @property
    def d(self) -> int:
        return self.b.size

    def jump_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nu.arrays(self.d)


@dataclass(eq=False)
class Segment:
    """Triplet constant on clock intervals [from_idx, to_idx)."""

    from_idx: int
    to_idx: int
    triplet: Triplet

    def __post_init__(self) -> None:
        self.from_idx = int(self.from_idx)
        self.to_idx = int(self.to_idx)
        if not 0 <= self.from_idx < self.to_idx:
            raise ValueError("segment must cover a nonempty interval range")


@dataclass(eq=False)
class MarketSpec:
    """A complete market: dimension, clock, and segments covering the clock."""

    d: int
    clock: OperationalClock
    segments: tuple[Segment, ...]
    psi_divergent: bool = False   # declared closed-form divergence of psi.G

    def __post_init__(self) -> None:
        self.d = int(self.d)
        self.segments = tuple(self.segments)
        self.psi_divergent = bool(self.psi_divergent)
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not self.segments:
            raise ValueError("market needs at least one segment")
        cursor = 0
        for seg in self.segments:
            if seg.from_idx != cursor:
                raise ValueError("segments must tile the clock intervals in order")
            cursor = seg.to_idx
        if cursor != self.clock.n_intervals:
            raise ValueError("segments must cover every clock interval")
        for seg in self.segments:
            if seg.triplet.d != self.d:
                raise ValueError("segment dimension does not match market")

    def segment_of_interval(self, k: int) -> Segment:
        for seg in self.segments:
            if seg.from_idx <= k < seg.to_idx:
                return seg
        raise IndexError(k)

    @property
    def effective_increments(self) -> np.ndarray:
        """Clock mass per interval: dt, or the declared dG_jump on jump segments."""
        dg = self.clock.increments.copy()
        for seg in self.segments:
            if seg.triplet.dG_jump > 0:
                dg[seg.from_idx:seg.to_idx] = seg.triplet.dG_jump
        return dg


# --------------------------------------------------------------------------
# validation and triplet-level quantities


@dataclass(eq=False)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(eq=False)
class ValidationReport:
    checks: tuple[Check, ...]
    integrates_log: bool

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        lines = [f"[{'ok' if c.passed else 'FAIL'}] {c.name}"
                 + (f": {c.detail}" if c.detail else "") for c in self.checks]
        lines.append(f"integrates_log = {self.integrates_log}")
        return "\n".join(lines)


def validate_triplet(t: Triplet) -> ValidationReport:
    """Structural checks on one triplet; failures are reported, not raised."""
    checks: list[Check] = []
    c = t.c
    finite = bool(np.all(np.isfinite(t.b)) and np.all(np.isfinite(c)))
    checks.append(Check("finite_entries", finite))
    sym = finite and bool(np.abs(c - c.T).max(initial=0.0)
                          <= 1e-10 * (1.0 + np.abs(c).max(initial=0.0)))
    checks.append(Check("c_symmetric", sym))
    if sym:
        evals = np.linalg.eigvalsh(c)
        tol = 1e-10 * (1.0 + float(evals.max(initial=0.0)))
        psd = bool(evals.min(initial=0.0) >= -tol)
        checks.append(Check("c_psd", psd, f"min eigenvalue {evals.min(initial=0.0):.3e}"))
    else:
        checks.append(Check("c_psd", False, "skipped: c not symmetric"))

    jumps, rates = t.jump_arrays()
    checks.append(Check("intensities_positive",
                        bool(np.all(rates > 0)) if rates.size else True))

    big_ok = True
    detail = ""
    if t.nu.density is not None and not t.nu.density.mass_finite():
        big_ok = False
        detail = "density tail mass diverges on {|x|>1}"
    elif rates.size:
        big = np.linalg.norm(jumps, axis=1) > 1.0
        detail = f"nu[|x|>1] = {rates[big].sum():.6g}"
    checks.append(Check("big_jump_intensity_finite", big_ok, detail))

    ilog = t.nu.density.integrates_log() if t.nu.density is not None else True

    if t.dG_jump > 0:
        # when the clock jumps, the diffusion part must vanish, the truncated
        # drift must equal the compensator of small jumps, and the total jump
        # probability per interval cannot exceed one
        no_c = bool(np.abs(c).max(initial=0.0) <= 1e-12)
        if rates.size:
            small = np.linalg.norm(jumps, axis=1) <= 1.0
            comp = (jumps[small] * rates[small, None]).sum(axis=0)
        else:
            comp = np.zeros(t.d)
        b_ok = bool(np.abs(t.b - comp).max(initial=0.0)
                    <= 1e-9 * (1.0 + np.abs(comp).max(initial=0.0)))
        mass_ok = bool(rates.sum() * t.dG_jump <= 1.0 + 1e-12)
        checks.append(Check("clock_jump_consistency", no_c and b_ok and mass_ok,
                            f"c_zero={no_c} b_matches_compensator={b_ok} "
                            f"jump_probability<=1={mass_ok}"))
    return ValidationReport(tuple(checks), ilog)


def drift_rate(t: Triplet):
    """Total drift rate b + integral of x over {|x|>1}; None when that
    integral is undefined (density spec with non-integrable |x| tail)."""
    if t.nu.density is not None and not t.nu.density.mean_finite():
        return None
    jumps, rates = t.jump_arrays()
    if rates.size == 0:
        return t.b.copy()
    big = np.linalg.norm(jumps, axis=1) > 1.0
    return t.b + (jumps[big] * rates[big, None]).sum(axis=0)


@dataclass(eq=False)
class IntegralResult:
    partials: np.ndarray
    total: float
    diverged: bool


def clock_integral(values, clock: OperationalClock, *,
                   increments: np.ndarray | None = None) -> IntegralResult:
    """Integral of a nonnegative per-interval rate against the clock.

    `values[k]` is the rate on interval k; the result carries the running
    partial sums.  Any non-finite value or partial marks the result diverged.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape != (clock.n_intervals,):
        raise ValueError("need exactly one value per clock interval")
    if np.any(vals < 0):
        raise ValueError("values must be nonnegative")
    dg = clock.increments if increments is None else np.asarray(increments)
    if dg.shape != vals.shape:
        raise ValueError("increment override has wrong length")
    with np.errstate(over="ignore", invalid="ignore"):
        partials = np.cumsum(vals * dg)
    diverged = bool(~np.all(np.isfinite(vals)) or ~np.all(np.isfinite(partials)))
    total = float(partials[-1]) if partials.size else 0.0
    return IntegralResult(partials=partials, total=total, diverged=diverged)


# --------------------------------------------------------------------------
# JSON serialization (strict: unknown fields are rejected)


def _take(obj: dict, where: str, required: Sequence[str],
          optional: Sequence[str] = ()) -> dict:
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected an object")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ValueError(f"{where}: unknown fields {sorted(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ValueError(f"{where}: missing fields {missing}")
    return obj


def _density_from_json(obj: dict) -> DensitySpec:
    _take(obj, "density", ["family", "params", "truncation", "quad_nodes"])
    fam = obj["family"]
    if fam not in _FAMILIES:
        raise ValueError(f"density: unknown family {fam!r}")
    shape_key = _FAMILIES[fam].shape_key
    params = _take(obj["params"], "density.params",
                   ["scale", shape_key, "direction"], ["two_sided"])
    trunc = obj["truncation"]
    if not (isinstance(trunc, list) and len(trunc) == 2):
        raise ValueError("density.truncation must be [x_min, x_max]")
    x_max = math.inf if trunc[1] is None else float(trunc[1])
    return DensitySpec(
        family=fam,
        scale=params["scale"],
        shape=params[shape_key],
        direction=params["direction"],
        x_min=float(trunc[0]),
        x_max=x_max,
        quad_nodes=obj["quad_nodes"],
        two_sided=bool(params.get("two_sided", False)),
    )


def market_from_json(text: str) -> MarketSpec:
    """Parse a market document; every unknown field is an error."""
    doc = json.loads(text)
    _take(doc, "market", ["d", "clock", "segments"], ["psi_divergent"])
    clock_obj = _take(doc["clock"], "clock", ["times"])
    clock = OperationalClock(np.asarray(clock_obj["times"], dtype=np.float64))
    segments = []
    for i, seg in enumerate(doc["segments"]):
        where = f"segments[{i}]"
        _take(seg, where, ["from", "to", "b", "c", "atoms"],
              ["density", "dG_jump"])
        atoms = []
        for j, a in enumerate(seg["atoms"]):
            _take(a, f"{where}.atoms[{j}]", ["x", "intensity"])
            atoms.append(JumpAtom(np.asarray(a["x"], dtype=np.float64),
                                  a["intensity"]))
        density = (_density_from_json(seg["density"])
                   if "density" in seg else None)
        nu = JumpMeasure(tuple(atoms), density)
        trip = Triplet(b=np.asarray(seg["b"], dtype=np.float64),
                       c=np.asarray(seg["c"], dtype=np.float64),
                       nu=nu, dG_jump=seg.get("dG_jump", 0.0))
        segments.append(Segment(seg["from"], seg["to"], trip))
    return MarketSpec(d=doc["d"], clock=clock, segments=tuple(segments),
                      psi_divergent=doc.get("psi_divergent", False))


def load_market(path) -> MarketSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return market_from_json(fh.read())


def market_to_json(m: MarketSpec) -> str:
    """Canonical JSON for a market (inverse of market_from_json)."""
    segs = []
    for seg in m.segments:
        t = seg.triplet
        entry: dict = {
            "from": seg.from_idx,
            "to": seg.to_idx,
            "b": t.b.tolist(),
            "c": t.c.tolist(),
            "atoms": [{"x": a.x.tolist(), "intensity": a.intensity}
                      for a in t.nu.explicit],
        }
        ds = t.nu.density
        if ds is not None:
            entry["density"] = {
                "family": ds.family,
                "params": {
                    "scale": ds.scale,
                    _FAMILIES[ds.family].shape_key: ds.shape,
                    "direction": ds.direction.tolist(),
                    "two_sided": ds.two_sided,
                },
                "truncation": [ds.x_min,
                               None if math.isinf(ds.x_max) else ds.x_max],
                "quad_nodes": ds.quad_nodes,
            }
        if t.dG_jump > 0:
            entry["dG_jump"] = t.dG_jump
        segs.append(entry)
    doc = {"d": m.d, "clock": {"times": m.clock.times.tolist()},
           "segments": segs}
    if m.psi_divergent:
        doc["psi_divergent"] = True
    return json.dumps(doc)


def validate_market(m: MarketSpec) -> ValidationReport:
    """Aggregate triplet validation across segments (names prefixed by index)."""
    checks: list[Check] = []
    ilog = True
    for i, seg in enumerate(m.segments):
        rep = validate_triplet(seg.triplet)
        ilog = ilog and rep.integrates_log
        for c in rep.checks:
            checks.append(Check(f"segment[{i}].{c.name}", c.passed, c.detail))
    return ValidationReport(tuple(checks), ilog)
