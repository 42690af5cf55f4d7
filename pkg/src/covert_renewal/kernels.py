"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
fallback.  Setting ``COVERT_RENEWAL_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("COVERT_RENEWAL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def queue_recursion(arrival_times, services, dep_start, *, impl=None):
    """Run the FIFO recursion; see ``_kernels_py.queue_recursion``."""
    arr, svc = _f64(arrival_times), _f64(services)
    if arr.shape != svc.shape or arr.ndim != 1:
        raise ValueError("arrival_times and services must be 1-D and equal length")
    return (impl or _impl).queue_recursion(arr, svc, float(dep_start))


def buffer_walk(incoming, sends, overt, initial, *, impl=None):
    """Run the buffer walk; see ``_kernels_py.buffer_walk``."""
    snd = _f64(sends)
    ovt = np.ascontiguousarray(overt, dtype=np.uint8)
    if ovt.shape != snd.shape:
        raise ValueError("sends and overt must have equal length")
    return (impl or _impl).buffer_walk(_f64(incoming), snd, ovt, int(initial))


def codebook_loglik(codewords, d0, departures, mu, *, impl=None):
    """Score codewords against departures; see ``_kernels_py.codebook_loglik``."""
    cw = np.ascontiguousarray(np.atleast_2d(codewords), dtype=np.float64)
    dep = _f64(departures)
    if cw.shape[1] != dep.shape[0]:
        raise ValueError("codeword length must match number of departures")
    return (impl or _impl).codebook_loglik(cw, float(d0), dep, float(mu))


def scan_fresh_competitors(generator, kind, p1, p2, p3, departures, d0, mu, target, max_codewords,
                           *, impl=None):
    """Search freshly drawn codewords for one that beats ``target``; see ``_kernels_py``."""
    return (impl or _impl).scan_fresh_competitors(generator, int(kind), float(p1), float(p2), float(p3),
                                                  _f64(departures), float(d0), float(mu), float(target),
                                                  int(max_codewords))


def available_backends():
    """Map backend name to module for every backend that imports."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
