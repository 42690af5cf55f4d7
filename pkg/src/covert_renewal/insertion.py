"""Covert packet insertion into a renewal packet stream.

Alice sits between Jack and Steve.  In the first phase she delays every
packet by stretching time (``tau_i -> tau_i / (1 - rho)``) and keeps whatever
has not been released by the time Jack's last packet of that phase arrives.
In the second phase she emits a compressed copy of Jack's renewal process and
labels each emitted packet covert with probability ``rho``; overt sends drain
the buffer, Jack's arrivals refill it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import special

from .errors import DomainError, InfeasiblePlanError
from .kernels import buffer_walk
from .renewal import RenewalSpec, _as_rng, fisher_constant, scale_compress

__all__ = [
    "OVERT",
    "COVERT",
    "PSI_RULES",
    "InsertionPlan",
    "PacketStream",
    "TransmissionTrace",
    "InsertionResult",
    "psi_ratio",
    "standalone_rho",
    "plan",
    "buffering_phase",
    "transmission_phase",
    "run_scenario1",
    "run_buffer_only",
]

OVERT = 0
COVERT = 1

MIN_N = 100
MIN_PHASE2 = 10

# "fisher": ((sqrt(32 c) / eps) erfinv(1 - zeta))^2; "plain": ((2 / eps) erfinv(1 - zeta))^2
PSI_RULES = ("fisher", "plain")


def _check_unit(name, v):
    if not (0.0 < v < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {v}")


def psi_ratio(epsilon: float, zeta: float, c: float, rule: str = "fisher") -> float:
    """Return ``psi / (1 - psi)`` for the buffering fraction.

    ``epsilon`` may equal 1 (the loosest covertness budget); ``zeta`` must lie
    in (0, 1).
    """
    if not (0.0 < epsilon <= 1.0):
        raise DomainError(f"epsilon must lie in (0, 1], got {epsilon}")
    _check_unit("zeta", zeta)
    if rule == "fisher":
        k = math.sqrt(32.0 * c) / epsilon
    elif rule == "plain":
        k = 2.0 / epsilon
    else:
        raise DomainError(f"unknown psi rule {rule!r}; expected one of {PSI_RULES}")
    return (k * float(special.erfinv(1.0 - zeta))) ** 2


def standalone_rho(N: int, epsilon: float, c: float) -> float:
    """Stretch parameter when buffering over all ``N`` packets: ``eps / sqrt(c N)``."""
    return epsilon / math.sqrt(c * N)


@dataclass(frozen=True)
class InsertionPlan:
    """Parameters of one two-phase insertion run.

    ``n_buffer`` and ``n_transmit`` are the integer phase lengths; the
    continuous ``psi * N`` and ``(1 - psi) * N`` enter the rho formulas.
    """

    N: int
    epsilon: float
    zeta: float
    c: float
    psi: float
    rho_buffer: float
    rho_insert: float
    n_buffer: int
    n_transmit: int
    psi_rule: str = "fisher"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def plan(N: int, epsilon: float, zeta: float, spec: RenewalSpec, psi_rule: str = "fisher",
         c: float | None = None) -> InsertionPlan:
    """Choose the buffering fraction and both scaling parameters.

    Parameters
    ----------
    N : int
        Packets Jack sends during the whole run, at least 100.
    epsilon, zeta : float
        Covertness and failure budgets, both in (0, 1).
    spec : RenewalSpec
        Jack's inter-arrival law; must pass the regularity check.
    psi_rule : {"fisher", "plain"}
        Which constant multiplies ``erfinv(1 - zeta) / epsilon``.
    c : float, optional
        Fisher constant override (skips the regularity check).

    Raises
    ------
    RegularityError
        ``spec`` is not regular.
    InfeasiblePlanError
        Fewer than 10 packets remain for the second phase.
    """
    N = int(N)
    if N < MIN_N:
        raise DomainError(f"N must be >= {MIN_N}, got {N}")
    _check_unit("epsilon", epsilon)
    _check_unit("zeta", zeta)
    if c is None:
        c = fisher_constant(spec)
    r = psi_ratio(epsilon, zeta, c, psi_rule)
    psi = r / (1.0 + r)
    n_buffer = int(math.floor(psi * N + 0.5))
    n_transmit = N - n_buffer
    if n_transmit < MIN_PHASE2:
        raise InfeasiblePlanError(
            f"budget infeasible at N={N}: psi={psi:.6g} leaves {n_transmit} packets for the "
            f"second phase (need >= {MIN_PHASE2}); increase N, epsilon or zeta"
        )
    rho_buffer = epsilon / math.sqrt(c * psi * N)
    rho_insert = epsilon / math.sqrt(2.0 * c * N * (1.0 - psi))
    if not rho_insert < 1.0:
        raise InfeasiblePlanError(f"rho_insert={rho_insert:.6g} >= 1 at N={N}")
    return InsertionPlan(N, float(epsilon), float(zeta), float(c), psi, rho_buffer, rho_insert,
                         n_buffer, n_transmit, psi_rule)


@dataclass(frozen=True)
class PacketStream:
    """Timestamps (seconds) of emitted packets with overt/covert labels."""

    arrivals: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.arrivals, dtype=float)
        lab = np.asarray(self.labels, dtype=np.uint8)
        if arr.shape != lab.shape or arr.ndim != 1:
            raise DomainError("arrivals and labels must be 1-D and of equal length")
        if arr.size > 1 and not np.all(np.diff(arr) > 0):
            raise DomainError("packet timestamps must be strictly increasing")
        object.__setattr__(self, "arrivals", arr)
        object.__setattr__(self, "labels", lab)

    def __len__(self):
        return self.arrivals.size

    @property
    def n_covert(self) -> int:
        return int(np.count_nonzero(self.labels == COVERT))

    @property
    def n_overt(self) -> int:
        return int(np.count_nonzero(self.labels == OVERT))

    @classmethod
    def overt(cls, times) -> "PacketStream":
        times = np.asarray(times, dtype=float)
        return cls(times, np.zeros(times.size, dtype=np.uint8))

    @classmethod
    def concat(cls, *streams: "PacketStream") -> "PacketStream":
        return cls(np.concatenate([s.arrivals for s in streams]),
                   np.concatenate([s.labels for s in streams]))


def buffering_phase(arrivals, rho: float) -> tuple[PacketStream, int]:
    """Release each packet at ``tau_i / (1 - rho)`` if that is no later than ``tau_N``.

    Returns the released stream and the number of packets left in the buffer.
    """
    tau = np.asarray(arrivals, dtype=float)
    if tau.size == 0:
        raise DomainError("buffering phase needs at least one arrival")
    if not (0.0 <= rho < 1.0):
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    release = tau / (1.0 - rho)
    keep = release <= tau[-1]
    out = PacketStream.overt(release[keep])
    return out, int(tau.size - len(out))


@dataclass(frozen=True)
class TransmissionTrace:
    """Outcome of the second phase.

    ``output`` holds the packets actually sent; an overt send that found the
    buffer empty is skipped and counted in ``skipped``.  ``n_overt`` counts
    every scheduled overt send, so ``n_total = n_covert + n_overt``.
    """

    output: PacketStream
    failed: bool
    first_failure_time: float | None
    n_covert: int
    n_overt: int
    n_total: int
    walk_steps: int
    final_buffer: int
    skipped: int


def _renewal_times(spec: RenewalSpec, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Event times of an ordinary renewal process on ``(0, duration]``."""
    mean = spec.mean
    chunks = []
    t = 0.0
    while True:
        need = max(16, int(1.1 * (duration - t) / mean + 6.0 * math.sqrt(max(duration - t, 0.0) / mean)) + 16)
        times = t + np.cumsum(spec.sample(need, rng))
        chunks.append(times)
        t = float(times[-1])
        if t > duration:
            break
    times = np.concatenate(chunks)
    return times[: np.searchsorted(times, duration, side="right")]


def transmission_phase(incoming, initial_buffer: int, spec: RenewalSpec, rho: float,
                       duration: float, seed, start: float = 0.0) -> TransmissionTrace:
    """Run the overt/covert second phase over ``(start, start + duration]``.

    Alice emits the renewal process of ``spec`` compressed by ``1 - rho``; each
    emitted packet is covert with probability ``rho``.  ``rho = 0`` is plain
    forwarding of ``incoming``.

    Parameters
    ----------
    incoming : array_like
        Absolute arrival times of Jack's packets during the phase.
    initial_buffer : int
        Packets held at ``start``.
    seed : int or numpy.random.Generator
    """
    incoming = np.asarray(incoming, dtype=float)
    if initial_buffer < 0:
        raise DomainError("initial_buffer must be >= 0")
    if not (0.0 <= rho < 1.0):
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    if duration < 0:
        raise DomainError("duration must be >= 0")
    if rho == 0.0:
        out = PacketStream.overt(incoming)
        n = len(out)
        return TransmissionTrace(out, False, None, 0, n, n, incoming.size + n, int(initial_buffer), 0)

    rng = _as_rng(seed)
    rel = _renewal_times(scale_compress(spec, rho), duration, rng)
    labels = (rng.random(rel.size) < rho).astype(np.uint8)
    overt = labels == OVERT
    sent, first_fail, final_buf, skipped = buffer_walk(incoming - start, rel, overt, initial_buffer)
    sent = sent.astype(bool)
    out = PacketStream(start + rel[sent], labels[sent])
    n_overt = int(np.count_nonzero(overt))
    return TransmissionTrace(
        output=out,
        failed=first_fail >= 0,
        first_failure_time=float(start + rel[first_fail]) if first_fail >= 0 else None,
        n_covert=int(rel.size - n_overt),
        n_overt=n_overt,
        n_total=int(rel.size),
        walk_steps=int(incoming.size + n_overt),
        final_buffer=int(final_buf),
        skipped=int(skipped),
    )


@dataclass(frozen=True)
class InsertionResult:
    """One end-to-end two-phase realization."""

    N: int
    epsilon: float
    zeta: float
    psi: float
    rho_insert: float
    seed: int
    m: int
    Nc: int
    No: int
    Noc: int
    K: int
    failed: bool
    output: PacketStream = field(repr=False, compare=False)
    phase2_start: float = field(repr=False, compare=False, default=0.0)

    RECORD_FIELDS = ("N", "epsilon", "zeta", "psi", "rho_insert", "seed",
                     "m", "Nc", "No", "Noc", "K", "failed")

    def to_record(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.RECORD_FIELDS}

    def phase2_interarrivals(self) -> np.ndarray:
        """Gaps Willie sees after the phase boundary, first gap measured from it."""
        t = self.output.arrivals
        t = t[t > self.phase2_start]
        return np.diff(np.concatenate(([self.phase2_start], t)))


def run_scenario1(spec: RenewalSpec, N: int, epsilon: float, zeta: float, seed: int,
                  psi_rule: str = "fisher", insertion_plan: InsertionPlan | None = None) -> InsertionResult:
    """Sample Jack's ``N`` arrivals and run both phases on them.

    A precomputed ``insertion_plan`` skips re-planning in Monte Carlo loops.
    """
    p = insertion_plan or plan(N, epsilon, zeta, spec, psi_rule)
    rng = np.random.default_rng(seed)
    tau = np.cumsum(spec.sample(p.N, rng))
    n1 = p.n_buffer
    released, m = buffering_phase(tau[:n1], p.rho_buffer)
    start = float(tau[n1 - 1])
    trace = transmission_phase(tau[n1:], m, spec, p.rho_insert, float(tau[-1]) - start, rng, start=start)
    return InsertionResult(
        N=p.N, epsilon=p.epsilon, zeta=p.zeta, psi=p.psi, rho_insert=p.rho_insert, seed=int(seed),
        m=m, Nc=trace.n_covert, No=trace.n_overt, Noc=trace.n_total, K=trace.walk_steps,
        failed=trace.failed, output=PacketStream.concat(released, trace.output), phase2_start=start,
    )


def run_buffer_only(spec: RenewalSpec, N: int, epsilon: float, seed: int,
                    c: float | None = None) -> int:
    """Buffer over all ``N`` packets with ``rho = eps / sqrt(c N)``; return the count held."""
    if c is None:
        c = fisher_constant(spec)
    rng = np.random.default_rng(seed)
    tau = np.cumsum(spec.sample(int(N), rng))
    rho = standalone_rho(N, epsilon, c)
    return int(tau.size - np.count_nonzero(tau / (1.0 - rho) <= tau[-1]))
