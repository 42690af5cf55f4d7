import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covert_renewal import kernels
from covert_renewal.kernels import _kernels_py

positive = st.floats(1e-3, 10.0, allow_nan=False)


def test_backend_reported():
    assert kernels.BACKEND in ("python", "cython")
    assert "python" in kernels.available_backends()


class TestQueueRecursion:
    def test_hand_trace(self, backend):
        # packet zero leaves at 3; A1 = 1 -> server busy, W1 = 0; A1 = 5 -> W1 = 2
        w, d, end = kernels.queue_recursion([1.0], [0.5], 3.0, impl=backend)
        assert w[0] == 0.0 and d[0] == 0.5 and end == 3.5
        w, d, end = kernels.queue_recursion([5.0], [0.5], 3.0, impl=backend)
        assert w[0] == 2.0 and d[0] == 2.5 and end == 5.5

    def test_empty(self, backend):
        w, d, end = kernels.queue_recursion([], [], 1.25, impl=backend)
        assert w.size == 0 and end == 1.25

    def test_shape_check(self):
        with pytest.raises(ValueError):
            kernels.queue_recursion([1.0, 2.0], [1.0], 0.0)

    @settings(max_examples=40, deadline=None)
    @given(gaps=st.lists(positive, min_size=1, max_size=40), svc=st.lists(positive, min_size=40, max_size=40),
           d0=positive)
    def test_invariants(self, gaps, svc, d0):
        t = np.cumsum(gaps)
        s = np.array(svc[: len(gaps)])
        w, d, end = kernels.queue_recursion(t, s, d0)
        assert np.array_equal(d, w + s)
        e = np.cumsum(np.concatenate(([d0], d)))
        assert np.array_equal(w, np.maximum(t - e[:-1], 0.0))
        assert end == e[-1]


class TestBufferWalk:
    def test_hand_trace(self, backend):
        # buffer 1; arrivals at 1.0 and 2.5; overt sends at 0.5, 1.0, 2.0, 3.0
        sent, first, final, skipped = kernels.buffer_walk([1.0, 2.5], [0.5, 1.0, 2.0, 3.0], [1, 1, 1, 1], 1,
                                                          impl=backend)
        # t=0.5: 1->0; t=1.0 arrival first, 1->0; t=2.0 empty -> fail; t=3.0 after 2.5 arrival -> ok
        assert list(sent) == [1, 1, 0, 1]
        assert first == 2 and final == 0 and skipped == 1

    def test_covert_sends_do_not_drain(self, backend):
        sent, first, final, _ = kernels.buffer_walk([], [1.0, 2.0], [0, 0], 0, impl=backend)
        assert list(sent) == [1, 1] and first == -1 and final == 0

    def test_trailing_arrivals_counted(self, backend):
        _, _, final, _ = kernels.buffer_walk([5.0, 6.0], [1.0], [1], 1, impl=backend)
        assert final == 2


class TestCodebookLoglik:
    def test_hand_trace(self, backend):
        # arrivals (1, 1), d0 = 0.5, D = (1.2, 0.8): W = (0.5, 0.3), s = (0.7, 0.5)
        mu = 2.0
        ll = kernels.codebook_loglik([[1.0, 1.0]], 0.5, [1.2, 0.8], mu, impl=backend)
        assert ll[0] == pytest.approx(2 * math.log(mu) - mu * 1.2, abs=1e-15)

    def test_causality_violation(self, backend):
        # second packet would arrive after its own departure
        ll = kernels.codebook_loglik([[0.1, 5.0]], 0.5, [1.0, 1.0], 2.0, impl=backend)
        assert ll[0] == -np.inf

    def test_true_codeword_is_feasible(self, rng):
        a = rng.exponential(1.0, 30)
        s = rng.exponential(0.5, 30)
        w, d, _ = kernels.queue_recursion(np.cumsum(a), s, 0.7)
        ll = kernels.codebook_loglik(a[None, :], 0.7, d, 2.0)
        assert ll[0] == pytest.approx(30 * math.log(2.0) - 2.0 * s.sum(), rel=1e-12)


@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="compiled kernels not built")
class TestBackendsAgree:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(1, 30), M=st.integers(1, 50))
    def test_bit_identical(self, seed, n, M):
        cy = kernels.available_backends()["cython"]
        g = np.random.default_rng(seed)
        t = np.cumsum(g.exponential(1.0, n))
        s = g.exponential(0.5, n)
        a = kernels.queue_recursion(t, s, 0.3, impl=cy)
        b = kernels.queue_recursion(t, s, 0.3, impl=_kernels_py)
        assert all(np.array_equal(x, y) for x, y in zip(a[:2], b[:2])) and a[2] == b[2]
        cw = g.exponential(1.0, (M, n))
        assert np.array_equal(kernels.codebook_loglik(cw, 0.3, a[1], 2.0, impl=cy),
                              kernels.codebook_loglik(cw, 0.3, a[1], 2.0, impl=_kernels_py))
        inc = np.sort(g.uniform(0, 10, n))
        snd = np.sort(g.uniform(0, 10, M))
        ovt = g.integers(0, 2, M)
        ra = kernels.buffer_walk(inc, snd, ovt, 2, impl=cy)
        rb = kernels.buffer_walk(inc, snd, ovt, 2, impl=_kernels_py)
        assert np.array_equal(ra[0], rb[0]) and ra[1:] == rb[1:]

    @pytest.mark.parametrize("kind,p", [(0, (1.0, 1.0, 1.0)), (0, (0.5, 2.0, 1.0)), (0, (1.0, 1.0, 0.5)),
                                         (1, (0.5, 1.5, 0.0))])
    def test_scan_identical(self, kind, p):
        cy = kernels.available_backends()["cython"]
        g = np.random.default_rng(1)
        D = g.exponential(1.0, 8)
        out = []
        for impl in (cy, _kernels_py):
            gen = np.random.default_rng(99)
            res = kernels.scan_fresh_competitors(gen, kind, *p, D, 0.4, 2.0, -4.0, 3000, impl=impl)
            out.append((res, gen.random()))
        assert out[0] == out[1]


def test_scan_finds_nothing_above_max(backend):
    # no codeword can exceed n log mu
    g = np.random.default_rng(0)
    hit, scanned = kernels.scan_fresh_competitors(g, 0, 1.0, 1.0, 1.0, [1.0, 1.0], 0.5, 2.0,
                                                  2 * math.log(2.0), 500, impl=backend)
    assert not hit and scanned == 500


def test_env_forces_python_fallback():
    code = ("from covert_renewal import kernels, cli; print(kernels.BACKEND); "
            "cli.main(['capacity', '--family', 'gamma', '--params', '2', '0.5', '--mu', '2'])")
    outs = {}
    for flag in ("1", "0"):
        env = {**os.environ, "COVERT_RENEWAL_PURE_PYTHON": flag}
        outs[flag] = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                    check=True).stdout.split("\n", 1)
    assert outs["1"][0] == "python"
    assert outs["0"][0] == ("cython" if "cython" in kernels.available_backends() else "python")
    assert outs["1"][1] == outs["0"][1]
