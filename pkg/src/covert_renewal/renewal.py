"""Inter-arrival distribution families for renewal packet channels.

Every family except ``uniform`` is handled as a generalized gamma
distribution in Stacy's parameterization,

    p(x) = p / (a**d * Gamma(d/p)) * x**(d-1) * exp(-(x/a)**p),   x > 0,

so exponential, gamma, Erlang, chi-squared, Weibull and Rayleigh share one
density, one sampler and one set of moments.  ``scale_factor`` multiplies
every inter-arrival time, i.e. it rescales ``a`` (or both uniform bounds).

Numerical integrals run on ``[0, x_max]`` where ``x_max`` is the point whose
closed-form survival probability equals ``TAIL_MASS``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any

import numpy as np
from scipy import integrate, special

from .errors import DomainError, RegularityError

__all__ = [
    "FAMILIES",
    "RenewalSpec",
    "RegularityReport",
    "exponential",
    "gamma",
    "weibull",
    "generalized_gamma",
    "rayleigh",
    "erlang",
    "chi_squared",
    "uniform",
    "sample_interarrivals",
    "sample_sum",
    "rate",
    "variance",
    "scale_stretch",
    "scale_compress",
    "kl_divergence",
    "fisher_constant",
    "kl_small_rho",
    "check_regularity",
]

FAMILIES = (
    "exponential",
    "gamma",
    "weibull",
    "generalized_gamma",
    "rayleigh",
    "erlang",
    "chi_squared",
    "uniform",
)

_ALIASES = {
    "exp": "exponential",
    "gengamma": "generalized_gamma",
    "chi2": "chi_squared",
    "chisquared": "chi_squared",
}

_N_PARAMS = {
    "exponential": 1,
    "gamma": 2,
    "weibull": 2,
    "generalized_gamma": 3,
    "rayleigh": 1,
    "erlang": 2,
    "chi_squared": 1,
    "uniform": 2,
}

# Survival probability beyond the integration cutoff.
TAIL_MASS = 1e-14
# Quantile breakpoints that split quadrature into well-conditioned pieces.
_BREAK_PROBS = (1e-10, 1e-6, 1e-3, 0.05, 0.5, 0.95, 1 - 1e-4, 1 - 1e-8)
_QUAD_OPTS = dict(epsabs=1e-15, epsrel=1e-12, limit=400)


def _normalize_family(name: str) -> str:
    key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
    key = _ALIASES.get(key, key)
    if key not in FAMILIES:
        raise DomainError(f"unknown family {name!r}; expected one of {FAMILIES}")
    return key


@dataclass(frozen=True)
class RenewalSpec:
    """Parametric inter-arrival density ``p0`` of a renewal process.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    params : tuple of float
        ``exponential``: (rate,); ``gamma``: (shape k, scale theta);
        ``weibull``: (shape, scale); ``generalized_gamma``: (a, d, p);
        ``rayleigh``: (sigma,); ``erlang``: (k, rate); ``chi_squared``: (dof,);
        ``uniform``: (low, high) with ``0 <= low < high``.
    scale_factor : float
        Multiplies every inter-arrival time.  Density ``p(x) = p0(x/s)/s``.
    """

    family: str
    params: tuple[float, ...]
    scale_factor: float = 1.0
    _canon: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        fam = _normalize_family(self.family)
        params = tuple(float(p) for p in np.atleast_1d(self.params))
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "scale_factor", float(self.scale_factor))
        if len(params) != _N_PARAMS[fam]:
            raise DomainError(f"{fam} takes {_N_PARAMS[fam]} parameter(s), got {len(params)}")
        if not all(math.isfinite(p) for p in params):
            raise DomainError(f"non-finite parameter in {params}")
        s = self.scale_factor
        if not (math.isfinite(s) and s > 0):
            raise DomainError(f"scale_factor must be positive and finite, got {s}")
        object.__setattr__(self, "_canon", _canonicalize(fam, params, s))
        if not (math.isfinite(self.mean) and self.mean > 0):
            raise DomainError(f"{self} has no finite positive mean")

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "params": list(self.params), "scale_factor": self.scale_factor}

    @classmethod
    def from_dict(cls, block: dict[str, Any]) -> "RenewalSpec":
        unknown = set(block) - {"family", "params", "scale_factor"}
        if unknown:
            raise DomainError(f"unknown spec fields: {sorted(unknown)}")
        return cls(block["family"], tuple(block["params"]), block.get("scale_factor", 1.0))

    def __str__(self):
        ps = ", ".join(f"{p:g}" for p in self.params)
        tail = "" if self.scale_factor == 1.0 else f", scale_factor={self.scale_factor:g}"
        return f"{self.family}({ps}{tail})"

    # -- canonical representation -----------------------------------------
    @property
    def is_uniform(self) -> bool:
        return self._canon[0] == "uniform"

    @property
    def gg_params(self) -> tuple[float, float, float]:
        """Generalized-gamma ``(a, d, p)`` with the scale factor folded in."""
        if self.is_uniform:
            raise DomainError("uniform is not a generalized-gamma family member")
        return self._canon[1]

    @property
    def support(self) -> tuple[float, float]:
        if self.is_uniform:
            return self._canon[1]
        return (0.0, math.inf)

    # -- moments -------------------------------------------------------
    @property
    def mean(self) -> float:
        if self.is_uniform:
            lo, hi = self._canon[1]
            return 0.5 * (lo + hi)
        a, d, p = self._canon[1]
        return a * math.exp(math.lgamma((d + 1) / p) - math.lgamma(d / p))

    @property
    def rate(self) -> float:
        return 1.0 / self.mean

    @property
    def variance(self) -> float:
        if self.is_uniform:
            lo, hi = self._canon[1]
            return (hi - lo) ** 2 / 12.0
        a, d, p = self._canon[1]
        g0 = math.lgamma(d / p)
        m2 = math.exp(math.lgamma((d + 2) / p) - g0)
        m1 = math.exp(math.lgamma((d + 1) / p) - g0)
        return a * a * (m2 - m1 * m1)

    # -- density and tails -------------------------------------------------
    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_uniform:
            lo, hi = self._canon[1]
            inside = (x >= lo) & (x <= hi)
            return np.where(inside, -math.log(hi - lo), -np.inf)
        a, d, p = self._canon[1]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            xs = np.where(x > 0, x, 1.0)
            z = xs / a
            out = math.log(p) - math.log(a) - math.lgamma(d / p) + (d - 1) * np.log(z) - z**p
        return np.where(x > 0, out, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def dlogpdf(self, x):
        """Derivative of ``log p(x)`` in ``x`` (zero inside the uniform support)."""
        x = np.asarray(x, dtype=float)
        if self.is_uniform:
            return np.zeros_like(x)
        a, d, p = self._canon[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            return (d - 1) / x - (p / a) * (x / a) ** (p - 1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_uniform:
            lo, hi = self._canon[1]
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        a, d, p = self._canon[1]
        return special.gammainc(d / p, (np.maximum(x, 0.0) / a) ** p)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_uniform:
            return 1.0 - self.cdf(x)
        a, d, p = self._canon[1]
        return special.gammaincc(d / p, (np.maximum(x, 0.0) / a) ** p)

    def isf(self, q):
        """Inverse survival function: the ``x`` with ``sf(x) = q``."""
        q = np.asarray(q, dtype=float)
        if self.is_uniform:
            lo, hi = self._canon[1]
            return hi - q * (hi - lo)
        a, d, p = self._canon[1]
        return a * special.gammainccinv(d / p, q) ** (1.0 / p)

    def breakpoints(self) -> np.ndarray:
        """Increasing grid ``[lo, ..., x_max]`` for piecewise quadrature."""
        lo, hi = self.support
        if self.is_uniform:
            return np.linspace(lo, hi, 5)
        inner = self.isf(1.0 - np.asarray(_BREAK_PROBS))
        pts = np.concatenate(([0.0], inner, [float(self.isf(TAIL_MASS))]))
        return np.unique(pts)

    # -- sampling ----------------------------------------------------------
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.is_uniform:
            lo, hi = self._canon[1]
            out = rng.uniform(lo, hi, n)
        else:
            out = _gg_draw(self._canon[1], rng, n)
        # Exact zeros have probability ~2**-53 but would break positivity.
        bad = out <= 0
        while bad.any():
            out[bad] = self.sample(int(bad.sum()), rng)
            bad = out <= 0
        return out


def _gg_draw(canon, rng, size):
    a, d, p = canon
    y = rng.standard_gamma(d / p, size)
    if p != 1.0:
        y = y ** (1.0 / p)
    return a * y


def _canonicalize(fam, params, s):
    if fam == "uniform":
        lo, hi = params
        if not (0 <= lo < hi):
            raise DomainError(f"uniform needs 0 <= low < high, got {params}")
        return ("uniform", (lo * s, hi * s))
    if fam == "exponential":
        (lam,) = params
        _positive(fam, params)
        gg = (1.0 / lam, 1.0, 1.0)
    elif fam == "gamma":
        _positive(fam, params)
        k, theta = params
        gg = (theta, k, 1.0)
    elif fam == "erlang":
        k, r = params
        if k < 1 or k != int(k):
            raise DomainError(f"erlang shape must be a positive integer, got {k}")
        _positive(fam, params)
        gg = (1.0 / r, k, 1.0)
    elif fam == "chi_squared":
        _positive(fam, params)
        (nu,) = params
        gg = (2.0, nu / 2.0, 1.0)
    elif fam == "weibull":
        _positive(fam, params)
        k, scale = params
        gg = (scale, k, k)
    elif fam == "rayleigh":
        _positive(fam, params)
        (sigma,) = params
        gg = (sigma * math.sqrt(2.0), 2.0, 2.0)
    else:
        _positive(fam, params)
        gg = tuple(params)
    a, d, p = gg
    return ("gg", (a * s, d, p))


def _positive(fam, params):
    if not all(v > 0 for v in params):
        raise DomainError(f"{fam} parameters must be positive, got {params}")


# ---------------------------------------------------------------------------
# Constructors

def exponential(rate: float = 1.0) -> RenewalSpec:
    return RenewalSpec("exponential", (rate,))


def gamma(shape: float, scale: float = 1.0) -> RenewalSpec:
    return RenewalSpec("gamma", (shape, scale))


def weibull(shape: float, scale: float = 1.0) -> RenewalSpec:
    return RenewalSpec("weibull", (shape, scale))


def generalized_gamma(a: float, d: float, p: float) -> RenewalSpec:
    return RenewalSpec("generalized_gamma", (a, d, p))


def rayleigh(sigma: float = 1.0) -> RenewalSpec:
    return RenewalSpec("rayleigh", (sigma,))


def erlang(k: int, rate: float = 1.0) -> RenewalSpec:
    return RenewalSpec("erlang", (k, rate))


def chi_squared(dof: float) -> RenewalSpec:
    return RenewalSpec("chi_squared", (dof,))


def uniform(low: float, high: float) -> RenewalSpec:
    return RenewalSpec("uniform", (low, high))


# ---------------------------------------------------------------------------
# Operations

def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_interarrivals(spec: RenewalSpec, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. inter-arrival times from ``spec``.

    ``seed`` is an integer (or a ``numpy.random.Generator`` whose state is
    advanced).  Identical ``(spec, n, seed)`` give identical output.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return spec.sample(int(n), _as_rng(seed))


def sample_sum(spec: RenewalSpec, n: int, size: int, seed, chunk: int = 1 << 22) -> np.ndarray:
    """Draw ``size`` independent sums of ``n`` inter-arrival times.

    Gamma-type members (``p == 1``) are closed under convolution, so the sum is
    drawn exactly as a single Gamma(n*d) variate.  Other families sum draws in
    chunks.
    """
    rng = _as_rng(seed)
    if not spec.is_uniform:
        a, d, p = spec.gg_params
        if p == 1.0:
            return a * rng.standard_gamma(n * d, size)
    out = np.empty(size)
    for i in range(size):
        total = 0.0
        left = n
        while left:
            m = min(left, chunk)
            total += spec.sample(m, rng).sum()
            left -= m
        out[i] = total
    return out


def rate(spec: RenewalSpec) -> float:
    """Packets per second of the renewal process: ``1 / E[X]``."""
    return spec.rate


def variance(spec: RenewalSpec) -> float:
    """Variance of one inter-arrival time."""
    return spec.variance


def _check_rho(rho):
    if not (0.0 < rho < 1.0):
        raise DomainError(f"rho must lie in (0, 1), got {rho}")


def scale_stretch(spec: RenewalSpec, rho: float) -> RenewalSpec:
    """Lengthen inter-arrivals by ``1/(1-rho)``: ``p1(x) = (1-rho) p0((1-rho) x)``."""
    _check_rho(rho)
    return replace(spec, scale_factor=spec.scale_factor / (1.0 - rho))


def scale_compress(spec: RenewalSpec, rho: float) -> RenewalSpec:
    """Shorten inter-arrivals by ``(1-rho)``: ``p1(x) = p0(x/(1-rho)) / (1-rho)``."""
    _check_rho(rho)
    return replace(spec, scale_factor=spec.scale_factor * (1.0 - rho))


def _quad_pieces(func, pts, **opts) -> float:
    kw = {**_QUAD_OPTS, **opts}
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi > lo:
            val, _ = integrate.quad(func, lo, hi, **kw)
            total += val
    return total


def _covers(spec1: RenewalSpec, spec0: RenewalSpec) -> bool:
    lo0, hi0 = spec0.support
    lo1, hi1 = spec1.support
    return lo1 <= lo0 and hi1 >= hi0


def _kl_exponential(lam0, lam1) -> float:
    r = lam1 / lam0
    return float(-math.log1p(r - 1.0) + (r - 1.0))


def kl_divergence(spec0: RenewalSpec, spec1: RenewalSpec) -> float:
    """Relative entropy ``D(p0 || p1)`` in nats.

    Closed form for an exponential pair; adaptive quadrature over the support
    of ``p0`` otherwise.  Returns ``math.inf`` when ``p1`` vanishes on part of
    the support of ``p0``.
    """
    if not _covers(spec1, spec0):
        return math.inf
    if spec0.family == "exponential" and spec1.family == "exponential":
        return _kl_exponential(spec0.rate, spec1.rate)
    if spec0 == spec1:
        return 0.0

    def integrand(x):
        l0 = float(spec0.logpdf(x))
        if l0 == -math.inf:
            return 0.0
        return math.exp(l0) * (l0 - float(spec1.logpdf(x)))

    pts = spec0.breakpoints()
    if not spec1.is_uniform and not spec0.is_uniform:
        # Put spec1's bulk on the grid too; helps when the scales differ a lot.
        extra = spec1.isf(np.array([0.9, 0.5, 0.1]))
        pts = np.unique(np.concatenate((pts, extra[extra < pts[-1]])))
    return max(_quad_pieces(integrand, pts), 0.0)


def fisher_constant(spec: RenewalSpec) -> float:
    """Curvature ``c`` of the scaled family: ``D(p0 || p1(.,rho)) ~ c rho^2 / 2``.

    ``c = -1 + E[(X d/dx log p0(X))^2]``.  Exponential gives 1 and gamma with
    shape ``k`` gives ``k`` in closed form; every other family is integrated.

    Raises
    ------
    RegularityError
        If the family fails the regularity conditions (e.g. bounded support).
    """
    report = check_regularity(spec)
    if not report.all_met:
        failed = [k for k, v in report.conditions_met.items() if not v]
        raise RegularityError(f"{spec} fails regularity conditions: {failed}", report)
    if spec.family in ("exponential",):
        return 1.0
    if spec.family in ("gamma", "erlang", "chi_squared"):
        return spec.gg_params[1]
    return _fisher_quadrature(spec)


def _fisher_quadrature(spec: RenewalSpec) -> float:
    def integrand(x):
        if x <= 0:
            return 0.0
        t = x * float(spec.dlogpdf(x))
        return float(spec.pdf(x)) * t * t

    return -1.0 + _quad_pieces(integrand, spec.breakpoints())


def kl_small_rho(spec: RenewalSpec, rho: float) -> float:
    """Second-order approximation ``c * rho**2 / 2`` of the scaled-family KL."""
    if not (0.0 <= rho < 1.0):
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    if rho == 0.0:
        return 0.0
    return fisher_constant(spec) * rho * rho / 2.0


# ---------------------------------------------------------------------------
# Regularity conditions

REGULARITY_CONDITIONS = ("smoothness", "dominated_derivatives", "vanishing_integrals", "support")

_FD_STEP = 1e-4
_RHO_GRID = (0.05, 0.25, 0.5, 0.75, 0.95)
_VANISH_TOL = 1e-6


@dataclass(frozen=True)
class RegularityReport:
    """Per-condition outcome of :func:`check_regularity`."""

    spec: RenewalSpec
    conditions_met: dict[str, bool]
    details: dict[str, Any]
    notes: tuple[str, ...] = ()

    @property
    def all_met(self) -> bool:
        return all(self.conditions_met.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "conditions_met": dict(self.conditions_met),
            "details": dict(self.details),
            "notes": list(self.notes),
        }


def _log_p1(spec, x, rho):
    # log of (1-rho) p0((1-rho) x); rho may be slightly negative for stencils.
    return math.log1p(-rho) + spec.logpdf((1.0 - rho) * x)


def _x_grid(spec, n=400):
    if spec.is_uniform:
        lo, hi = spec.support
        top = hi / (1.0 - max(_RHO_GRID))
        # the edges of each scaled support, where log p1 jumps to -inf
        edges = [e / (1.0 - r) for r in _RHO_GRID for e in (lo, hi) if e > 0]
        return np.unique(np.concatenate((np.linspace(max(lo, 1e-12), top, n), edges)))
    lo = float(spec.isf(1.0 - 1e-10))
    hi = float(spec.isf(1e-12))
    return np.geomspace(lo, hi, n)


@lru_cache(maxsize=256)
def check_regularity(spec: RenewalSpec) -> RegularityReport:
    """Numerically check the conditions under which ``D ~ c rho^2 / 2`` holds.

    Derivatives in ``rho`` use central differences with step ``1e-4`` on a
    finite ``(x, rho)`` grid.  The support condition is decided per family.
    """
    h = _FD_STEP
    x = _x_grid(spec)
    details: dict[str, Any] = {}

    # smoothness and domination over the rho grid
    finite_everywhere = True
    F = np.zeros_like(x)
    G = np.zeros_like(x)
    H = np.zeros_like(x)
    with np.errstate(invalid="ignore", over="ignore"):
        for rho in _RHO_GRID:
            L = {k: _log_p1(spec, x, rho + k * h) for k in (-2, -1, 0, 1, 2)}
            d1 = (L[1] - L[-1]) / (2 * h)
            d2 = (L[1] - 2 * L[0] + L[-1]) / (h * h)
            d3 = (L[2] - 2 * L[1] + 2 * L[-1] - L[-2]) / (2 * h**3)
            p1 = np.exp(L[0])
            dp1 = p1 * d1
            d2p1 = p1 * (d2 + d1 * d1)
            ok = np.isfinite(d1) & np.isfinite(d2) & np.isfinite(d3)
            finite_everywhere &= bool(ok.all())
            F = np.fmax(F, np.abs(dp1))
            G = np.fmax(G, np.abs(d2p1))
            H = np.fmax(H, np.abs(d3))
    p0 = spec.pdf(x)
    with np.errstate(invalid="ignore"):
        p0H = p0 * H
    int_F = float(np.trapezoid(np.where(np.isfinite(F), F, np.inf), x))
    int_G = float(np.trapezoid(np.where(np.isfinite(G), G, np.inf), x))
    int_H = float(np.trapezoid(np.where(np.isfinite(H), p0H, np.inf), x))
    details["grid_points"] = int(x.size)
    details["rho_grid"] = list(_RHO_GRID)
    details["integral_F"] = int_F
    details["integral_G"] = int_G
    details["integral_p0_H"] = int_H
    dominated = finite_everywhere and all(math.isfinite(v) for v in (int_F, int_G, int_H))

    # vanishing integrals of the pointwise rho-derivatives at rho = 0
    lo, hi = spec.support
    if spec.is_uniform:
        # classical derivative exists only where all stencil densities are positive
        lo, hi = lo / (1 - h) if lo > 0 else lo, hi / (1 + h)
        pts = np.linspace(lo, hi, 5)
    else:
        pts = spec.breakpoints()

    def dp(xv):
        p = [math.exp(float(_log_p1(spec, xv, k * h))) for k in (-1, 0, 1)]
        return (p[2] - p[0]) / (2 * h)

    def d2p(xv):
        p = [math.exp(float(_log_p1(spec, xv, k * h))) for k in (-1, 0, 1)]
        return (p[2] - 2 * p[1] + p[0]) / (h * h)

    # finite-difference integrands are noisy at the 1e-12 level
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        v1 = _quad_pieces(dp, pts, epsabs=1e-11, epsrel=1e-9, limit=100)
        v2 = _quad_pieces(d2p, pts, epsabs=1e-11, epsrel=1e-9, limit=100)
    details["integral_dp1_drho"] = v1
    details["integral_d2p1_drho2"] = v2
    vanishing = abs(v1) < _VANISH_TOL and abs(v2) < _VANISH_TOL

    support_ok = not spec.is_uniform
    details["support"] = list(spec.support)

    met = {
        "smoothness": finite_everywhere,
        "dominated_derivatives": dominated,
        "vanishing_integrals": vanishing,
        "support": support_ok,
    }
    notes = (
        "domination is checked on a finite (x, rho) grid; a bound uniform in "
        "rho over all of (0, 1) is not machine-checkable",
    )
    return RegularityReport(spec, met, details, notes)
