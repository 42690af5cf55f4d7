"""Covert timing channel through a G/M/1 queue.

Alice encodes a message as the inter-arrival times of packets she forwards;
those packets cross a FIFO queue with exponential service before Bob sees
their departures.  With a codebook drawn from Jack's own inter-arrival law
the released traffic looks exactly like Jack's.

Time origin for a trace is the arrival of packet zero.  Packet ``i >= 1``
arrives at ``A_1 + ... + A_i`` and leaves at ``d0 + D_1 + ... + D_i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .errors import DomainError, InfeasibleParameterError, InfeasiblePlanError, StabilityError
from .insertion import InsertionPlan, _renewal_times, buffering_phase, plan
from .kernels import buffer_walk, codebook_loglik, queue_recursion, scan_fresh_competitors
from .renewal import RenewalSpec, _as_rng, exponential, kl_divergence

__all__ = [
    "DECODE_FAILURE",
    "MAX_CODEBOOK_ENTRIES",
    "CODEBOOK_CHUNK_ROWS",
    "QueueTrace",
    "Codebook",
    "CodebookStream",
    "CapacityBound",
    "TimingResult",
    "DecodeTrial",
    "gm1_simulate",
    "trace_violations",
    "warmup_interarrivals",
    "generate_codebook",
    "conditional_log_likelihood",
    "ml_decode",
    "scan_competitors",
    "scan_fresh_codewords",
    "nearest_codeword_decode",
    "capacity_bound",
    "codebook_size_for_rate",
    "decode_trial",
    "run_scenario2",
]

DECODE_FAILURE = -1
MAX_CODEBOOK_ENTRIES = 10**9
CODEBOOK_CHUNK_ROWS = 4096
WARMUP_FACTOR = 50.0
MATERIALIZE_LIMIT = 5 * 10**7


# ---------------------------------------------------------------------------
# Queue

@dataclass(frozen=True)
class QueueTrace:
    """One pass of ``n + 1`` packets (packet zero plus ``n``) through the queue.

    Attributes
    ----------
    arrivals : ndarray
        Inter-arrival times ``A_1..A_n``.
    services : ndarray
        Service times ``S_1..S_n``.
    waits : ndarray
        Server idle time ``W_i`` before packet ``i`` starts service.
    departures : ndarray
        Inter-departure times ``D_i = W_i + S_i``.
    d0 : float
        Sojourn of packet zero, i.e. its departure time.
    mu : float
        Service rate.
    """

    arrivals: np.ndarray
    services: np.ndarray
    waits: np.ndarray
    departures: np.ndarray
    d0: float
    mu: float

    @property
    def n(self) -> int:
        return int(self.arrivals.size)

    @property
    def arrival_times(self) -> np.ndarray:
        return np.cumsum(self.arrivals)

    @property
    def departure_times(self) -> np.ndarray:
        return np.cumsum(np.concatenate(([self.d0], self.departures)))[1:]

    @property
    def sojourn_times(self) -> np.ndarray:
        return self.departure_times - self.arrival_times


def trace_violations(trace: QueueTrace) -> list[str]:
    """Re-derive the queue recursion independently; return failed invariants.

    Checks exactly (no tolerance): ``D_i == W_i + S_i``, ``W_i`` equals
    ``max(0, t_i - e_{i-1})`` with ``t`` the cumulative arrivals and ``e`` the
    cumulative departures starting at ``d0``, nonnegativity, and ``S_i > 0``.
    """
    bad = []
    A, S, W, D = trace.arrivals, trace.services, trace.waits, trace.departures
    if not (A.shape == S.shape == W.shape == D.shape):
        return ["array lengths differ"]
    if not np.array_equal(D, W + S):
        bad.append("D != W + S")
    t = np.cumsum(A)
    e = np.cumsum(np.concatenate(([trace.d0], D)))[:-1]
    if not np.array_equal(W, np.maximum(t - e, 0.0)):
        bad.append("W recursion")
    if np.any(A < 0) or np.any(W < 0) or np.any(D < 0) or trace.d0 < 0:
        bad.append("negative quantity")
    if np.any(S <= 0):
        bad.append("nonpositive service")
    return bad


def warmup_interarrivals(spec: RenewalSpec, mu: float, rng, factor: float = WARMUP_FACTOR) -> np.ndarray:
    """Gaps of ``spec`` traffic covering ``factor / (mu - lambda)`` seconds."""
    lam = spec.rate
    if mu <= lam:
        raise StabilityError(f"service rate mu={mu} must exceed arrival rate {lam}")
    horizon = factor / (mu - lam)
    times = _renewal_times(spec, horizon, _as_rng(rng))
    return np.diff(np.concatenate(([0.0], times)))


def gm1_simulate(interarrivals, mu: float, seed, *, arrival_rate: float | None = None,
                 warmup=None) -> QueueTrace:
    """Push packets through a FIFO queue with Exp(``mu``) service.

    Parameters
    ----------
    interarrivals : array_like
        ``A_1..A_n`` after packet zero (may be empty).
    mu : float
        Service rate.
    seed : int or numpy.random.Generator
    arrival_rate : float, optional
        Declared rate of the arrival process; ``mu`` must exceed it.
    warmup : array_like, optional
        Gaps of traffic that precedes packet zero, the last gap ending at
        packet zero.  Without it packet zero finds the queue empty.

    Raises
    ------
    StabilityError
        ``mu <= arrival_rate``.
    """
    A = np.asarray(interarrivals, dtype=float).ravel()
    if not mu > 0:
        raise DomainError("mu must be positive")
    if arrival_rate is not None and mu <= arrival_rate:
        raise StabilityError(f"service rate mu={mu} must exceed arrival rate {arrival_rate}")
    if np.any(A <= 0):
        raise DomainError("inter-arrival times must be positive")
    rng = _as_rng(seed)
    prev_dep = -math.inf
    if warmup is not None and len(warmup):
        w = np.asarray(warmup, dtype=float)
        # warm-up packet k arrives at -(w[k] + ... + w[-1]); gap w[k] follows it
        times = -np.cumsum(w[::-1])[::-1]
        ws = rng.exponential(1.0 / mu, times.size)
        _, _, prev_dep = queue_recursion(times, ws, float(times[0]))
    s0 = rng.exponential(1.0 / mu)
    d0 = max(prev_dep, 0.0) + s0
    S = rng.exponential(1.0 / mu, A.size)
    W, D, _ = queue_recursion(np.cumsum(A), S, d0)
    return QueueTrace(A, S, W, D, float(d0), float(mu))


# ---------------------------------------------------------------------------
# Codebooks

def _check_codebook_size(n, M):
    if n < 1:
        raise DomainError("blocklength n must be >= 1")
    if M < 1:
        raise DomainError("codebook size M must be >= 1")
    if M * n > MAX_CODEBOOK_ENTRIES:
        raise DomainError(f"codebook of {M} x {n} entries exceeds the {MAX_CODEBOOK_ENTRIES:.0e} memory guard; "
                          "use CodebookStream")


@dataclass(frozen=True)
class Codebook:
    """``M`` codewords of ``n`` inter-arrival times drawn i.i.d. from ``source_spec``."""

    n: int
    M: int
    codewords: np.ndarray = field(repr=False)
    source_spec: RenewalSpec
    seed: int | None = None

    @property
    def rate_nats_per_sec(self) -> float:
        return self.source_spec.rate * math.log(self.M) / self.n

    def header(self) -> dict[str, Any]:
        d = self.source_spec.to_dict()
        return {"n": self.n, "M": self.M, "family": d["family"], "params": d["params"],
                "scale_factor": d["scale_factor"], "seed": self.seed}

    def save(self, path) -> None:
        """Write a text matrix with a one-line JSON header."""
        path = Path(path)
        with path.open("w") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
            np.savetxt(fh, self.codewords, fmt="%.17g")

    @classmethod
    def load(cls, path) -> "Codebook":
        path = Path(path)
        with path.open() as fh:
            head = json.loads(fh.readline()[2:])
            cw = np.loadtxt(fh, ndmin=2)
        spec = RenewalSpec.from_dict({k: head[k] for k in ("family", "params", "scale_factor")})
        return cls(int(head["n"]), int(head["M"]), cw.reshape(head["M"], head["n"]), spec, head["seed"])


@dataclass(frozen=True)
class CodebookStream:
    """Lazily generated codebook; rows come in fixed chunks seeded by ``(seed, chunk)``.

    ``materialize()`` returns the same matrix as concatenating every chunk, so
    lazy scans and ``generate_codebook`` agree row for row.
    """

    spec: RenewalSpec
    n: int
    M: int
    seed: int
    chunk_rows: int = CODEBOOK_CHUNK_ROWS

    def __post_init__(self):
        if self.n < 1 or self.M < 1:
            raise DomainError("n and M must be >= 1")

    @property
    def n_chunks(self) -> int:
        return -(-self.M // self.chunk_rows)

    def chunk(self, k: int) -> np.ndarray:
        if not (0 <= k < self.n_chunks):
            raise IndexError(k)
        rows = min(self.chunk_rows, self.M - k * self.chunk_rows)
        rng = np.random.default_rng([int(self.seed), int(k)])
        return self.spec.sample(self.chunk_rows * self.n, rng).reshape(self.chunk_rows, self.n)[:rows]

    def codeword(self, j: int) -> np.ndarray:
        k, r = divmod(int(j), self.chunk_rows)
        return self.chunk(k)[r].copy()

    def iter_chunks(self) -> Iterator[tuple[int, np.ndarray]]:
        for k in range(self.n_chunks):
            yield k * self.chunk_rows, self.chunk(k)

    def materialize(self) -> Codebook:
        _check_codebook_size(self.n, self.M)
        cw = np.concatenate([c for _, c in self.iter_chunks()], axis=0)
        return Codebook(self.n, self.M, cw, self.spec, self.seed)


def generate_codebook(spec: RenewalSpec, n: int, M: int, seed: int) -> Codebook:
    """Draw an ``M x n`` codebook of i.i.d. inter-arrival times from ``spec``.

    Raises
    ------
    DomainError
        ``M * n`` exceeds ``MAX_CODEBOOK_ENTRIES`` or sizes are invalid.
    """
    _check_codebook_size(n, M)
    return CodebookStream(spec, int(n), int(M), int(seed)).materialize()


# ---------------------------------------------------------------------------
# Decoding

def _observation(trace_or_obs):
    if isinstance(trace_or_obs, QueueTrace):
        return trace_or_obs.d0, trace_or_obs.departures
    d0, D = trace_or_obs
    return float(d0), np.asarray(D, dtype=float)


def conditional_log_likelihood(codeword, d0: float, departures, mu: float) -> float:
    """Log-density of the departures given candidate arrivals ``codeword``.

    Implied services ``s_i = D_i - W_i`` with ``W_i`` from the queue
    recursion; the value is ``sum(log mu - mu s_i)`` or ``-inf`` if some
    ``s_i <= 0``.
    """
    if not mu > 0:
        raise DomainError("mu must be positive")
    return float(codebook_loglik(np.atleast_2d(codeword), d0, departures, mu)[0])


def ml_decode(trace, codebook: Codebook, mu: float) -> int:
    """Index of the most likely codeword, lowest index on ties.

    ``trace`` is a ``QueueTrace`` or a ``(d0, departures)`` pair.  Returns
    ``DECODE_FAILURE`` when every codeword is infeasible.
    """
    d0, D = _observation(trace)
    if D.size != codebook.n:
        raise DomainError(f"trace has {D.size} departures, codebook expects {codebook.n}")
    if codebook.M == 1:
        return 0
    ll = codebook_loglik(codebook.codewords, d0, D, mu)
    j = int(np.argmax(ll))
    return DECODE_FAILURE if ll[j] == -math.inf else j


def scan_competitors(stream: CodebookStream, true_index: int, trace, mu: float,
                     max_codewords: int | None = None) -> tuple[bool, int]:
    """Search the codebook for a codeword the ML decoder would prefer.

    Scans chunks in index order and stops at the first codeword that beats the
    transmitted one (higher likelihood, or equal with lower index).

    Returns
    -------
    beaten : bool
        ``True`` proves the ML decoder errs.  ``False`` after a full scan
        proves it decodes correctly; after a partial scan it is inconclusive.
    scanned : int
        Codewords examined.
    """
    d0, D = _observation(trace)
    target = conditional_log_likelihood(stream.codeword(true_index), d0, D, mu)
    limit = stream.M if max_codewords is None else min(stream.M, int(max_codewords))
    scanned = 0
    for base, rows in stream.iter_chunks():
        if scanned >= limit:
            break
        rows = rows[: limit - scanned]
        ll = codebook_loglik(rows, d0, D, mu)
        idx = np.arange(base, base + rows.shape[0])
        better = (ll > target) | ((ll == target) & (idx < true_index))
        better &= idx != true_index
        scanned += rows.shape[0]
        if np.any(better):
            return True, scanned
    return False, scanned


def _draw_params(spec: RenewalSpec):
    if spec.is_uniform:
        lo, hi = spec.support
        return 1, lo, hi, 0.0
    a, d, p = spec.gg_params
    return 0, a, d / p, 1.0 / p


def scan_fresh_codewords(spec: RenewalSpec, target: float, trace, mu: float, rng,
                         max_codewords: int) -> tuple[bool, int]:
    """Draw up to ``max_codewords`` fresh i.i.d. codewords looking for one above ``target``.

    Each competitor's symbols are drawn only while it can still win, which
    keeps every competitor i.i.d. from ``spec`` and independent of the trace
    while skipping most draws.  A hit proves that ML decoding over a codebook
    containing these competitors errs.
    """
    d0, D = _observation(trace)
    kind, p1, p2, p3 = _draw_params(spec)
    return scan_fresh_competitors(_as_rng(rng), kind, p1, p2, p3, D, d0, mu, target, max_codewords)


def nearest_codeword_decode(trace, codebook: Codebook) -> int:
    """Baseline decoder: codeword closest to the inter-departures in squared distance."""
    _, D = _observation(trace)
    dist = np.sum((codebook.codewords - D) ** 2, axis=1)
    return int(np.argmin(dist))


# ---------------------------------------------------------------------------
# Capacity

@dataclass(frozen=True)
class CapacityBound:
    """Achievable covert rate ``lambda (log(mu/lambda) - D(p0 || e_lambda))`` in nats/s.

    ``log_ratio_term`` and ``kl_penalty`` are per packet (nats); ``vacuous``
    flags a nonpositive bound.
    """

    value: float
    kl_penalty: float
    log_ratio_term: float
    rate: float
    mu: float
    vacuous: bool

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def capacity_bound(spec: RenewalSpec, mu: float) -> CapacityBound:
    """Lower bound on the timing capacity of a G/M/1 queue fed by ``spec``.

    Raises
    ------
    StabilityError
        ``mu <= rate(spec)``.
    """
    lam = spec.rate
    if not mu > lam:
        raise StabilityError(f"service rate mu={mu} must exceed arrival rate {lam}")
    kl = kl_divergence(spec, exponential(lam))
    log_ratio = math.log(mu / lam)
    value = lam * (log_ratio - kl)
    return CapacityBound(value, kl, log_ratio, lam, float(mu), value <= 0.0)


def codebook_size_for_rate(rate: float, n: int, lam: float) -> int:
    """``M`` closest to ``exp(n * rate / lam)``, at least 2."""
    return max(2, int(round(math.exp(n * rate / lam))))


@dataclass(frozen=True)
class DecodeTrial:
    """One transmission over the queue.

    ``error`` is exact when ``exhaustive`` is true; otherwise a found
    competitor proves an error and no competitor counts as success, so the
    error rate over such trials is a lower bound on the ML error rate.
    """

    error: bool
    exhaustive: bool
    scanned: int
    true_index: int


def decode_trial(spec: RenewalSpec, mu: float, n: int, M: int, seed: int,
                 max_scan: int | None = None, warmup_factor: float = WARMUP_FACTOR) -> DecodeTrial:
    """Send a uniformly chosen codeword through a stationary G/M/1 queue and decode it.

    A fresh codebook is drawn per call.  Small codebooks (at most
    ``MATERIALIZE_LIMIT`` entries) are materialized and decoded by ML when the
    scan budget covers them.  Otherwise the transmitted codeword is drawn
    alone and ``min(max_scan, M - 1)`` fresh competitors are searched
    (``scan_fresh_codewords``).  A trial counts as an error only if a better
    competitor turns up, so with a partial budget the error rate is a lower
    bound on the ML error rate; with the full ``M - 1`` it is the ML error.
    """
    rng = np.random.default_rng(seed)
    book_seed = int(rng.integers(2**63))
    j = int(rng.integers(M))
    budget = M - 1 if max_scan is None else min(int(max_scan), M - 1)
    full = budget >= M - 1
    materialize = full and M * n <= MATERIALIZE_LIMIT
    if materialize:
        book = generate_codebook(spec, n, M, book_seed)
        cw = book.codewords[j]
    else:
        cw = spec.sample(int(n), np.random.default_rng([book_seed, 0]))
    warm = warmup_interarrivals(spec, mu, rng, warmup_factor)
    trace = gm1_simulate(cw, mu, rng, arrival_rate=spec.rate, warmup=warm)
    if materialize:
        k = ml_decode(trace, book, mu)
        return DecodeTrial(k != j, True, M, j)
    target = conditional_log_likelihood(cw, trace.d0, trace.departures, mu)
    beaten, scanned = scan_fresh_codewords(spec, target, trace, mu, np.random.default_rng([book_seed, 1]), budget)
    return DecodeTrial(beaten, full, scanned, j)


# ---------------------------------------------------------------------------
# End-to-end timing scheme

@dataclass(frozen=True)
class TimingResult:
    """Outcome of one buffered covert timing transmission."""

    decoded_ok: bool
    failed_buffer: bool
    bits_sent: float
    plan: InsertionPlan
    N: int
    mu: float
    n: int
    M: int
    seed: int
    m: int
    true_index: int
    decoded_index: int
    released_interarrivals: np.ndarray = field(repr=False, compare=False)

    def to_record(self) -> dict[str, Any]:
        return {"N": self.N, "epsilon": self.plan.epsilon, "zeta": self.plan.zeta, "psi": self.plan.psi,
                "mu": self.mu, "n": self.n, "M": self.M, "seed": self.seed, "m": self.m,
                "decoded_ok": self.decoded_ok, "failed_buffer": self.failed_buffer,
                "bits_sent": self.bits_sent}


def run_scenario2(spec: RenewalSpec, N: int, epsilon: float, zeta: float, mu: float, n: int, M: int,
                  seed: int, psi_rule: str = "fisher", timing_plan: InsertionPlan | None = None,
                  warmup_factor: float = WARMUP_FACTOR) -> TimingResult:
    """Buffer, then release packets on a codeword schedule through the queue.

    Phase one is the stretching buffer over the first ``psi N`` packets.  In
    phase two packet zero leaves Alice at the phase boundary and packet ``i``
    at the boundary plus the first ``i`` codeword gaps; each release consumes
    a buffered packet and Jack's arrivals refill the buffer.  Bob decodes the
    codeword from the queue departures.

    Raises
    ------
    InfeasibleParameterError
        Nonpositive capacity bound, infeasible plan, or ``n`` larger than the
        second phase.
    """
    cap = capacity_bound(spec, mu)
    if cap.vacuous:
        raise InfeasibleParameterError(f"capacity bound {cap.value:.6g} <= 0; no covert rate available")
    p = timing_plan or plan(N, epsilon, zeta, spec, psi_rule)
    if n > p.n_transmit:
        raise InfeasiblePlanError(f"blocklength n={n} exceeds the {p.n_transmit} packets of the second phase")
    _check_codebook_size(n, M)
    rng = np.random.default_rng(seed)
    tau = np.cumsum(spec.sample(p.N, rng))
    n1 = p.n_buffer
    _, m = buffering_phase(tau[:n1], p.rho_buffer)
    start = float(tau[n1 - 1])

    book = generate_codebook(spec, n, M, int(rng.integers(2**63)))
    j = int(rng.integers(M))
    cw = book.codewords[j]
    sends = np.concatenate(([0.0], np.cumsum(cw)))
    _, first_fail, _, _ = buffer_walk(tau[n1:] - start, sends, np.ones(sends.size, dtype=np.uint8), m)
    failed = first_fail >= 0

    warm = warmup_interarrivals(spec, mu, rng, warmup_factor)
    trace = gm1_simulate(cw, mu, rng, arrival_rate=spec.rate, warmup=warm)
    k = ml_decode(trace, book, mu)
    ok = k == j
    bits = math.log2(M) if (ok and not failed) else 0.0
    return TimingResult(ok, failed, bits, p, p.N, float(mu), int(n), int(M), int(seed), m, j, k, cw.copy())
