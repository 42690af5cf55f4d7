"""Willie's detectors and the error-sum lower bound.

Willie observes inter-arrival times and decides between ``H0`` (Jack's
renewal process untouched) and ``H1`` (Alice is active).  Priors are equal,
so the quantity of interest is ``P_FA + P_MD``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Callable

import numpy as np

from .errors import DomainError, UndefinedObservationError
from .renewal import RenewalSpec, kl_divergence, sample_sum, scale_compress, scale_stretch

__all__ = [
    "Hypothesis",
    "DetectorConfig",
    "TestOutcome",
    "ErrorEstimate",
    "DETECTORS",
    "sum_threshold_test",
    "sum_threshold_decide",
    "chebyshev_bounds",
    "kl_error_lower_bound",
    "likelihood_ratio_test",
    "glrt_grid_test",
    "make_detector",
    "estimate_errors",
    "estimate_sum_test_errors",
]

DETECTORS = ("sum_threshold", "lrt", "glrt_grid")
DIRECTIONS = ("upper", "lower", "two_sided")


class Hypothesis(str, Enum):
    H0 = "H0"
    H1 = "H1"


@dataclass(frozen=True)
class DetectorConfig:
    """Sum-threshold detector settings.

    Attributes
    ----------
    alpha : float
        False-alarm target; sets ``U = sqrt(n_obs / (lambda0 * alpha))``.
    n_obs : int
        Inter-arrival observations summed.
    lambda0 : float
        Packet rate under ``H0``.
    sigma2 : float
        Inter-arrival variance under ``H0``.
    beta : float, optional
        Missed-detection target (informational).
    """

    alpha: float
    n_obs: int
    lambda0: float
    sigma2: float
    beta: float | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.beta is not None and not (0.0 < self.beta < 1.0):
            raise DomainError(f"beta must lie in (0, 1), got {self.beta}")
        if int(self.n_obs) < 1:
            raise DomainError("n_obs must be >= 1")
        if not (self.lambda0 > 0 and self.sigma2 > 0):
            raise DomainError("lambda0 and sigma2 must be positive")
        u = self.U
        if not (math.isfinite(u) and u > 0):
            raise DomainError(f"threshold offset U={u} is not positive and finite")

    @property
    def U(self) -> float:
        return math.sqrt(self.n_obs / (self.lambda0 * self.alpha))

    @property
    def center(self) -> float:
        """Expected sum under ``H0``."""
        return self.n_obs / self.lambda0

    @classmethod
    def for_spec(cls, spec: RenewalSpec, n_obs: int, alpha: float, beta: float | None = None):
        return cls(alpha, int(n_obs), spec.rate, spec.variance, beta)


@dataclass(frozen=True)
class TestOutcome:
    decision: Hypothesis
    statistic: float
    threshold: float

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class ErrorEstimate:
    """Monte Carlo error rates with a normal-approximation 95% half-width."""

    p_fa: float
    p_md: float
    trials: int
    ci_halfwidth: float

    @property
    def total(self) -> float:
        return self.p_fa + self.p_md

    def to_record(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_counts(cls, false_alarms: int, misses: int, trials: int) -> "ErrorEstimate":
        p_fa, p_md = false_alarms / trials, misses / trials
        hw = max(1.96 * math.sqrt(p * (1.0 - p) / trials) for p in (p_fa, p_md))
        return cls(p_fa, p_md, int(trials), hw)


# ---------------------------------------------------------------------------
# Sum-threshold detector

def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise DomainError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def sum_threshold_decide(S, config: DetectorConfig, direction: str = "upper"):
    """Vectorized decision on precomputed sums; ``True`` means ``H1``.

    ``upper`` flags ``S > n/lambda + U`` (stretched traffic), ``lower`` flags
    ``S < n/lambda - U`` (compressed traffic), ``two_sided`` flags either.
    """
    _check_direction(direction)
    S = np.asarray(S, dtype=float)
    dev = S - config.center
    if direction == "upper":
        return dev > config.U
    if direction == "lower":
        return dev < -config.U
    return np.abs(dev) > config.U


def sum_threshold_test(interarrivals, config: DetectorConfig, direction: str = "upper") -> TestOutcome:
    """Compare the total observed time against its ``H0`` mean plus ``U``.

    The sum is correctly rounded (``math.fsum``) so the decision does not
    depend on the order of the observations.
    """
    x = np.asarray(interarrivals, dtype=float)
    if x.ndim != 1 or x.size != config.n_obs:
        raise DomainError(f"expected {config.n_obs} inter-arrivals, got {x.size}")
    if np.any(x <= 0):
        raise DomainError("inter-arrival times must be positive")
    S = math.fsum(x)
    h1 = bool(sum_threshold_decide(S, config, direction))
    thr = config.center - config.U if direction == "lower" else config.center + config.U
    return TestOutcome(Hypothesis.H1 if h1 else Hypothesis.H0, S, thr)


def chebyshev_bounds(config: DetectorConfig, rho: float, variant: str = "stretch") -> tuple[float, float]:
    """Chebyshev bounds ``(P_FA, P_MD)`` for the sum-threshold detector.

    ``P_FA <= n / (lambda U^2)`` (equal to ``alpha`` for the configured U);
    ``P_MD <= sigma^2 lambda^2 / (n rho^2)``, times ``(1 - rho)^2`` for the
    ``compress`` variant.  Values above 1 are returned unclipped.
    """
    if not (0.0 < rho < 1.0):
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    n, lam = config.n_obs, config.lambda0
    p_fa = n / (lam * config.U**2)
    p_md = config.sigma2 * lam**2 / (n * rho**2)
    if variant == "compress":
        p_md *= (1.0 - rho) ** 2
    elif variant != "stretch":
        raise DomainError(f"variant must be 'stretch' or 'compress', got {variant!r}")
    return p_fa, p_md


# ---------------------------------------------------------------------------
# Likelihood-based detectors

def kl_error_lower_bound(spec0: RenewalSpec, spec1: RenewalSpec, n_obs: int) -> float:
    """Lower bound ``max(0, 1 - sqrt(n D(p0||p1) / 2))`` on ``P_FA + P_MD``."""
    if n_obs < 1:
        raise DomainError("n_obs must be >= 1")
    D = kl_divergence(spec0, spec1)
    if not math.isfinite(D):
        return 0.0
    return max(0.0, 1.0 - math.sqrt(n_obs * D / 2.0))


def _llr(x, spec0, spec1) -> float:
    x = np.asarray(x, dtype=float)
    l0 = spec0.logpdf(x)
    l1 = spec1.logpdf(x)
    both = np.isneginf(l0) & np.isneginf(l1)
    if np.any(both):
        i = int(np.argmax(both))
        raise UndefinedObservationError(f"observation {x[i]!r} has zero density under both hypotheses")
    only0 = np.isneginf(l1)
    only1 = np.isneginf(l0)
    if np.any(only0) and np.any(only1):
        raise UndefinedObservationError("observations are impossible under each hypothesis separately")
    if np.any(only1):
        return math.inf
    if np.any(only0):
        return -math.inf
    return float(np.sum(l1 - l0))


def likelihood_ratio_test(interarrivals, spec0: RenewalSpec, spec1: RenewalSpec) -> TestOutcome:
    """Equal-prior optimal test: ``H1`` iff the log-likelihood ratio is positive.

    Ties go to ``H0``.
    """
    stat = _llr(interarrivals, spec0, spec1)
    return TestOutcome(Hypothesis.H1 if stat > 0.0 else Hypothesis.H0, stat, 0.0)


def glrt_grid_test(interarrivals, spec0: RenewalSpec, rho_grid, variant: str = "compress",
                   threshold: float = 0.0) -> TestOutcome:
    """Composite-alternative test for an unknown ``rho``.

    Maximizes the log-likelihood ratio over ``rho_grid`` and flags ``H1`` when
    the maximum exceeds ``threshold``.  This is measurement instrumentation,
    not the warden analysed by the square-root law.
    """
    scale = {"compress": scale_compress, "stretch": scale_stretch}[variant]
    grid = np.atleast_1d(np.asarray(rho_grid, dtype=float))
    if grid.size == 0:
        raise DomainError("rho_grid is empty")
    stat = max(_llr(interarrivals, spec0, scale(spec0, float(r))) for r in grid)
    return TestOutcome(Hypothesis.H1 if stat > threshold else Hypothesis.H0, stat, threshold)


def make_detector(name: str, **kw) -> Callable[[np.ndarray], TestOutcome]:
    """Bind a detector designation to its parameters.

    ``sum_threshold`` needs ``config`` (and optionally ``direction``); ``lrt``
    needs ``spec0`` and ``spec1``; ``glrt_grid`` needs ``spec0`` and
    ``rho_grid`` (optionally ``variant``, ``threshold``).
    """
    if name == "sum_threshold":
        config, direction = kw["config"], kw.get("direction", "upper")
        return lambda x: sum_threshold_test(x, config, direction)
    if name == "lrt":
        s0, s1 = kw["spec0"], kw["spec1"]
        return lambda x: likelihood_ratio_test(x, s0, s1)
    if name == "glrt_grid":
        s0, grid = kw["spec0"], kw["rho_grid"]
        variant, thr = kw.get("variant", "compress"), kw.get("threshold", 0.0)
        return lambda x: glrt_grid_test(x, s0, grid, variant, thr)
    raise DomainError(f"unknown detector {name!r}; expected one of {DETECTORS}")


# ---------------------------------------------------------------------------
# Monte Carlo

def _trial_rng(seed: int, trial: int, hyp: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial), int(hyp)])


def estimate_errors(test, generator0, generator1, trials: int, seed: int, **detector_kw) -> ErrorEstimate:
    """Estimate ``P_FA`` and ``P_MD`` by simulation.

    Parameters
    ----------
    test : str or callable
        A designation from ``DETECTORS`` (bound with ``detector_kw``) or a
        callable mapping observations to a ``TestOutcome``.
    generator0, generator1 : callable
        ``generator(rng) -> observations`` under ``H0`` and ``H1``.
    trials : int
        Trials per hypothesis, at least 100.
    seed : int
        Trial ``i`` under hypothesis ``h`` uses ``default_rng([seed, i, h])``.
    """
    if trials < 100:
        raise DomainError("trials must be >= 100")
    detect = make_detector(test, **detector_kw) if isinstance(test, str) else test
    fa = sum(detect(generator0(_trial_rng(seed, i, 0))).decision is Hypothesis.H1 for i in range(trials))
    md = sum(detect(generator1(_trial_rng(seed, i, 1))).decision is Hypothesis.H0 for i in range(trials))
    return ErrorEstimate.from_counts(fa, md, trials)


def estimate_sum_test_errors(spec0: RenewalSpec, spec1: RenewalSpec, config: DetectorConfig,
                             trials: int, seed: int, direction: str = "upper") -> ErrorEstimate:
    """Sum-threshold error rates from directly sampled sums.

    Equivalent in law to ``estimate_errors("sum_threshold", ...)`` but draws
    each sum in one shot, which makes ``n_obs = 10**6`` with ``10**4`` trials
    cheap for gamma-type families.
    """
    if trials < 100:
        raise DomainError("trials must be >= 100")
    ss = np.random.SeedSequence(int(seed)).spawn(2)
    S0 = sample_sum(spec0, config.n_obs, trials, np.random.default_rng(ss[0]))
    S1 = sample_sum(spec1, config.n_obs, trials, np.random.default_rng(ss[1]))
    fa = int(np.count_nonzero(sum_threshold_decide(S0, config, direction)))
    md = int(np.count_nonzero(~sum_threshold_decide(S1, config, direction)))
    return ErrorEstimate.from_counts(fa, md, trials)
