"""Pure-Python/numpy fallback for the compiled kernels in ``_kernels.pyx``.

Floating-point operations happen in the same order as the compiled loops, so
both backends return bit-identical results.
"""

import math

import numpy as np


def queue_recursion(arrival_times, services, dep_start):
    """FIFO single-server recursion.

    For each packet ``j``: idle time ``w = max(0, t_j - dep)``, inter-departure
    ``d = w + s_j``, then ``dep += d``.

    Returns
    -------
    waits, inter_departures : ndarray
    final_departure : float
    """
    arr = np.asarray(arrival_times, dtype=float).tolist()
    svc = np.asarray(services, dtype=float).tolist()
    waits = [0.0] * len(arr)
    deps = [0.0] * len(arr)
    dep = float(dep_start)
    for j, t in enumerate(arr):
        w = t - dep
        if w < 0.0:
            w = 0.0
        d = w + svc[j]
        dep = dep + d
        waits[j] = w
        deps[j] = d
    return np.array(waits), np.array(deps), dep


def buffer_walk(incoming, sends, overt, initial):
    """Track a packet buffer fed by ``incoming`` and drained by overt ``sends``.

    Arrivals at the same instant as a send are counted first.  An overt send
    that finds the buffer empty is skipped and marked unsent.

    Returns
    -------
    sent : ndarray of uint8
    first_fail : int
        Index into ``sends`` of the first skipped send, or -1.
    final_buffer : int
        Buffer level after every send and every incoming packet.
    skipped : int
    """
    inc = np.asarray(incoming, dtype=float).tolist()
    snd = np.asarray(sends, dtype=float).tolist()
    ovt = np.asarray(overt, dtype=np.uint8).tolist()
    n_in = len(inc)
    sent = np.ones(len(snd), dtype=np.uint8)
    i = 0
    buf = int(initial)
    first_fail = -1
    skipped = 0
    for k, t in enumerate(snd):
        while i < n_in and inc[i] <= t:
            buf += 1
            i += 1
        if ovt[k]:
            if buf > 0:
                buf -= 1
            else:
                sent[k] = 0
                skipped += 1
                if first_fail < 0:
                    first_fail = k
    buf += n_in - i
    return sent, first_fail, buf, skipped


def codebook_loglik(codewords, d0, departures, mu):
    """Log-likelihood of observed inter-departures under each candidate codeword.

    Vectorized over codewords, sequential over symbols.  Infeasible codewords
    (some implied service time ``<= 0``) score ``-inf``.
    """
    cw = np.asarray(codewords, dtype=float)
    D = np.asarray(departures, dtype=float)
    M, n = cw.shape
    logmu = math.log(mu)
    acum = np.zeros(M)
    dep = np.full(M, float(d0))
    ll = np.zeros(M)
    alive = np.ones(M, dtype=bool)
    for i in range(n):
        acum = acum + cw[:, i]
        w = np.maximum(acum - dep, 0.0)
        s = D[i] - w
        alive &= s > 0.0
        ll = ll + (logmu - mu * s)
        dep = dep + D[i]
    return np.where(alive, ll, -np.inf)


def _draw(rng, kind, p1, p2, p3):
    while True:
        if kind == 0:
            y = rng.standard_gamma(p2)
            if p3 != 1.0:
                y = y**p3
            y = p1 * y
        else:
            y = rng.uniform(p1, p2)
        if y > 0.0:
            return float(y)


def scan_fresh_competitors(generator, kind, p1, p2, p3, departures, d0, mu, target, max_codewords):
    """Draw competitor codewords one symbol at a time until one beats ``target``.

    ``kind`` 0 draws ``p1 * Gamma(p2) ** p3`` (generalized gamma), kind 1
    draws uniform on ``[p1, p2)``.  A codeword stops consuming draws as
    soon as it is infeasible or can no longer exceed ``target``; the next
    codeword continues from the following draw.

    Returns
    -------
    beaten : bool
    scanned : int
        Codewords drawn up to and including the first that beats ``target``.
    """
    D = np.asarray(departures, dtype=float).tolist()
    n = len(D)
    logmu = math.log(mu)
    slack = 1e-9 * (abs(target) + 1.0)
    for m in range(int(max_codewords)):
        acum = 0.0
        dep = d0
        ll = 0.0
        alive = True
        for i in range(n):
            acum = acum + _draw(generator, kind, p1, p2, p3)
            w = acum - dep
            if w < 0.0:
                w = 0.0
            s = D[i] - w
            if s <= 0.0:
                alive = False
                break
            ll = ll + (logmu - mu * s)
            if ll + (n - i - 1) * logmu < target - slack:
                alive = False
                break
            dep = dep + D[i]
        if alive and ll > target:
            return True, m + 1
    return False, int(max_codewords)
