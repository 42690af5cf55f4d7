import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covert_renewal import detectors as D
from covert_renewal import insertion as I
from covert_renewal import renewal as R
from covert_renewal.errors import DomainError, UndefinedObservationError

EXP = R.exponential(1.0)


def _gen(spec, n):
    return lambda rng: spec.sample(n, rng)


class TestConfig:
    def test_threshold(self):
        cfg = D.DetectorConfig(0.05, 10_000, 2.0, 0.25)
        assert cfg.U == pytest.approx(math.sqrt(10_000 / (2.0 * 0.05)))
        assert cfg.center == 5000.0

    @pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1.0), dict(n_obs=0), dict(lambda0=-1.0)])
    def test_domain(self, kw):
        args = dict(alpha=0.05, n_obs=10, lambda0=1.0, sigma2=1.0)
        args.update(kw)
        with pytest.raises(DomainError):
            D.DetectorConfig(**args)

    def test_for_spec(self):
        cfg = D.DetectorConfig.for_spec(R.gamma(2.0, 0.5), 100, 0.1)
        assert cfg.lambda0 == pytest.approx(1.0) and cfg.sigma2 == pytest.approx(0.5)


class TestSumThreshold:
    def test_zero_deviation_is_h0(self):
        cfg = D.DetectorConfig(0.05, 1000, 2.0, 0.25)
        out = D.sum_threshold_test(np.full(1000, 0.5), cfg)
        assert out.decision is D.Hypothesis.H0
        assert out.statistic == pytest.approx(500.0)
        assert out.threshold == pytest.approx(500.0 + cfg.U)

    def test_length_and_sign_checks(self):
        cfg = D.DetectorConfig(0.05, 3, 1.0, 1.0)
        with pytest.raises(DomainError):
            D.sum_threshold_test([1.0, 1.0], cfg)
        with pytest.raises(DomainError):
            D.sum_threshold_test([1.0, -1.0, 1.0], cfg)

    def test_directions(self):
        cfg = D.DetectorConfig(0.05, 100, 1.0, 1.0)
        hi, lo = cfg.center + 2 * cfg.U, cfg.center - 2 * cfg.U
        assert D.sum_threshold_decide([hi, lo], cfg, "upper").tolist() == [True, False]
        assert D.sum_threshold_decide([hi, lo], cfg, "lower").tolist() == [False, True]
        assert D.sum_threshold_decide([hi, lo], cfg, "two_sided").tolist() == [True, True]
        with pytest.raises(DomainError):
            D.sum_threshold_decide(1.0, cfg, "sideways")

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.exponential(size=50)
        cfg = D.DetectorConfig(0.3, 50, 1.0, 1.0)
        a = D.sum_threshold_test(x, cfg)
        b = D.sum_threshold_test(rng.permutation(x), cfg)
        assert a == b

    def test_false_alarm_below_alpha(self):
        cfg = D.DetectorConfig.for_spec(EXP, 10_000, 0.05)
        est = D.estimate_sum_test_errors(EXP, EXP, cfg, 10_000, 1)
        assert est.p_fa <= 0.05

    def test_missed_detection_quarter_power(self):
        n = 10**6
        rho = n ** -0.25
        cfg = D.DetectorConfig.for_spec(EXP, n, 0.05)
        est = D.estimate_sum_test_errors(EXP, R.scale_stretch(EXP, rho), cfg, 10_000, 2)
        assert D.chebyshev_bounds(cfg, rho)[1] == pytest.approx(1e-3)
        assert est.p_md <= 0.01

    def test_sampled_sums_match_full_path(self):
        # both estimators agree in law on a small case
        n, rho = 400, 0.1
        cfg = D.DetectorConfig.for_spec(EXP, n, 0.1)
        s1 = R.scale_stretch(EXP, rho)
        a = D.estimate_sum_test_errors(EXP, s1, cfg, 4000, 3)
        b = D.estimate_errors("sum_threshold", _gen(EXP, n), _gen(s1, n), 4000, 3, config=cfg)
        assert abs(a.p_md - b.p_md) < 3 * max(a.ci_halfwidth, b.ci_halfwidth)

    def test_square_root_dichotomy(self):
        md_sqrt, md_quarter = [], []
        for n in (10**4, 10**5, 10**6):
            cfg = D.DetectorConfig.for_spec(EXP, n, 0.05)
            for rho, acc in ((0.1 / math.sqrt(n), md_sqrt), (n ** -0.25, md_quarter)):
                acc.append(D.estimate_sum_test_errors(EXP, R.scale_stretch(EXP, rho), cfg, 2000, n).p_md)
        assert min(md_sqrt) > 0.8
        assert md_quarter[-1] < 0.05


class TestChebyshev:
    def test_stretch(self):
        cfg = D.DetectorConfig(0.05, 10**6, 1.0, 1.0)
        p_fa, p_md = D.chebyshev_bounds(cfg, 10**-1.5)
        assert p_fa == pytest.approx(0.05, rel=1e-14)
        assert p_md == pytest.approx(1e-3, rel=1e-12)

    def test_compress_ratio(self):
        cfg = D.DetectorConfig(0.05, 10**6, 1.0, 1.0)
        rho = 10**-1.5
        s = D.chebyshev_bounds(cfg, rho, "stretch")[1]
        c = D.chebyshev_bounds(cfg, rho, "compress")[1]
        assert c / s == pytest.approx((1 - rho) ** 2, rel=1e-14)

    @pytest.mark.parametrize("rho", [0.0, 1.0])
    def test_domain(self, rho):
        with pytest.raises(DomainError):
            D.chebyshev_bounds(D.DetectorConfig(0.05, 10, 1.0, 1.0), rho)

    @settings(max_examples=50)
    @given(alpha=st.floats(1e-4, 0.99), n=st.integers(1, 10**7), lam=st.floats(1e-3, 1e3))
    def test_false_alarm_identity(self, alpha, n, lam):
        cfg = D.DetectorConfig(alpha, n, lam, 1.0)
        assert D.chebyshev_bounds(cfg, 0.5)[0] == pytest.approx(alpha, rel=1e-12)


class TestKLBound:
    def test_identical(self):
        assert D.kl_error_lower_bound(EXP, EXP, 1000) == 1.0

    def test_small_rho_limit(self):
        # n D -> n c rho^2 / 2 = 0.005, so the bound tends to 1 - sqrt(0.0025) = 0.95
        n = 10**6
        b = D.kl_error_lower_bound(EXP, R.scale_stretch(EXP, 0.1 / math.sqrt(n)), n)
        assert b == pytest.approx(1 - 0.1 / 2, abs=1e-4)

    def test_clamp(self):
        s1 = R.scale_stretch(EXP, 0.5)
        n = math.ceil(2 / R.kl_divergence(EXP, s1))
        assert D.kl_error_lower_bound(EXP, s1, n) == 0.0

    def test_monotone(self):
        vals_n = [D.kl_error_lower_bound(EXP, R.scale_stretch(EXP, 0.01), n) for n in (10, 100, 1000, 10**4)]
        vals_r = [D.kl_error_lower_bound(EXP, R.scale_stretch(EXP, r), 1000) for r in (0.001, 0.01, 0.03, 0.1)]
        assert all(a >= b for a, b in zip(vals_n, vals_n[1:]))
        assert all(a >= b for a, b in zip(vals_r, vals_r[1:]))

    def test_infinite_kl(self):
        assert D.kl_error_lower_bound(R.uniform(0.0, 2.0), R.uniform(0.0, 1.0), 5) == 0.0

    def test_domain(self):
        with pytest.raises(DomainError):
            D.kl_error_lower_bound(EXP, EXP, 0)


class TestLRT:
    def test_tie_goes_to_h0(self):
        out = D.likelihood_ratio_test([0.3, 1.2], EXP, EXP)
        assert out.statistic == 0.0 and out.decision is D.Hypothesis.H0

    def test_statistic(self):
        x = np.array([0.5, 2.0])
        s1 = R.exponential(0.9)
        out = D.likelihood_ratio_test(x, EXP, s1)
        want = sum(math.log(0.9) - 0.9 * v + v for v in x)
        assert out.statistic == pytest.approx(want, rel=1e-13)

    def test_support_edges(self):
        u0, u1 = R.uniform(0.0, 1.0), R.uniform(0.5, 2.0)
        assert D.likelihood_ratio_test([1.5], u0, u1).decision is D.Hypothesis.H1
        assert D.likelihood_ratio_test([0.2], u0, u1).decision is D.Hypothesis.H0
        with pytest.raises(UndefinedObservationError):
            D.likelihood_ratio_test([3.0], u0, u1)
        with pytest.raises(UndefinedObservationError):
            D.likelihood_ratio_test([0.2, 1.5], u0, u1)

    def test_separated_rates(self):
        s1 = R.exponential(0.9)
        est = D.estimate_errors("lrt", _gen(EXP, 10**4), _gen(s1, 10**4), 1000, 5, spec0=EXP, spec1=s1)
        assert est.p_md < 0.01

    def test_identical_generators(self):
        est = D.estimate_errors("lrt", _gen(EXP, 20), _gen(EXP, 20), 1000, 6, spec0=EXP, spec1=EXP)
        assert est.p_fa == 0.0 and est.p_md == 1.0
        assert est.total == pytest.approx(1.0, abs=est.ci_halfwidth + 1e-12)

    @pytest.mark.parametrize("spec", [EXP, R.gamma(2.0, 0.5)], ids=["exp", "gamma2"])
    def test_respects_kl_bound(self, spec):
        for rho in (0.01, 0.05):
            for n in (100, 1000):
                s1 = R.scale_stretch(spec, rho)
                est = D.estimate_errors("lrt", _gen(spec, n), _gen(s1, n), 1000, 7, spec0=spec, spec1=s1)
                assert est.total >= D.kl_error_lower_bound(spec, s1, n) - 3 * est.ci_halfwidth

    def test_lrt_beats_sum_test(self):
        n, rho = 500, 0.05
        s1 = R.scale_stretch(EXP, rho)
        cfg = D.DetectorConfig.for_spec(EXP, n, 0.05)
        lrt = D.estimate_errors("lrt", _gen(EXP, n), _gen(s1, n), 2000, 8, spec0=EXP, spec1=s1)
        st_ = D.estimate_errors("sum_threshold", _gen(EXP, n), _gen(s1, n), 2000, 8, config=cfg)
        assert lrt.total <= st_.total + 3 * max(lrt.ci_halfwidth, st_.ci_halfwidth)


class TestGLRT:
    def test_contains_truth(self):
        s1 = R.scale_compress(EXP, 0.2)
        grid = [0.05, 0.1, 0.2, 0.3]
        est = D.estimate_errors("glrt_grid", _gen(EXP, 500), _gen(s1, 500), 300, 9,
                                spec0=EXP, rho_grid=grid, variant="compress")
        assert est.p_md < 0.05

    def test_empty_grid(self):
        with pytest.raises(DomainError):
            D.glrt_grid_test([1.0], EXP, [])


class TestEstimate:
    def test_deterministic(self):
        s1 = R.scale_stretch(EXP, 0.1)
        a = D.estimate_errors("lrt", _gen(EXP, 50), _gen(s1, 50), 200, 3, spec0=EXP, spec1=s1)
        b = D.estimate_errors("lrt", _gen(EXP, 50), _gen(s1, 50), 200, 3, spec0=EXP, spec1=s1)
        assert a == b

    def test_trials_floor_and_unknown(self):
        with pytest.raises(DomainError):
            D.estimate_errors("lrt", _gen(EXP, 5), _gen(EXP, 5), 99, 0, spec0=EXP, spec1=EXP)
        with pytest.raises(DomainError):
            D.make_detector("oracle")

    def test_ci(self):
        e = D.ErrorEstimate.from_counts(30, 50, 100)
        assert e.ci_halfwidth == pytest.approx(1.96 * math.sqrt(0.25 / 100))
        assert e.to_record() == {"p_fa": 0.3, "p_md": 0.5, "trials": 100, "ci_halfwidth": e.ci_halfwidth}


class TestAgainstScenario1:
    def test_covert_traces_pass_lrt(self):
        p = I.plan(100_000, 0.2, 0.1, EXP)
        n_obs = int(0.9 * p.n_transmit)
        s1 = R.scale_compress(EXP, p.rho_insert)

        def gen1(rng):
            seed = int(rng.integers(2**63))
            return I.run_scenario1(EXP, p.N, p.epsilon, p.zeta, seed, insertion_plan=p).phase2_interarrivals()[:n_obs]

        est = D.estimate_errors("lrt", _gen(EXP, n_obs), gen1, 500, 10, spec0=EXP, spec1=s1)
        assert est.total >= 1 - 0.2 - 0.05

    def test_quarter_power_insertion_detected(self):
        # rho = N^(-1/4) in a scheme that otherwise mirrors the covert one
        N = 10**6
        rho = N ** -0.25
        p = I.InsertionPlan(N=N, epsilon=0.2, zeta=0.1, c=1.0, psi=0.5, rho_buffer=0.01, rho_insert=rho,
                            n_buffer=N // 2, n_transmit=N // 2, psi_rule="fisher")
        n_obs = int(0.45 * N)
        cfg = D.DetectorConfig.for_spec(EXP, n_obs, 0.05)

        def gen1(rng):
            seed = int(rng.integers(2**63))
            return I.run_scenario1(EXP, N, 0.2, 0.1, seed, insertion_plan=p).phase2_interarrivals()[:n_obs]

        est = D.estimate_errors("sum_threshold", _gen(EXP, n_obs), gen1, 100, 11, config=cfg, direction="lower")
        assert est.total <= 0.2
