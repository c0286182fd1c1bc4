import math

import numpy as np
import pytest

from dropoutlab.bounds import (
    bound_report,
    enumerate_masks_exact,
    exact_jensen_gap,
    h_function,
    jensen_gap_approx,
    kl_factorization_check,
    liao_gap_bounds,
)
from dropoutlab.dropout import PER_STEP, DropoutSpec
from dropoutlab.errors import DomainError
from dropoutlab.family import FamilyParams, mc_predict
from dropoutlab.mlp import Mlp
from dropoutlab.numeric import SplitSeed

# frozen oracles (high-precision direct evaluation of the definitions)
H_AT_04_05 = 2.3143551314209756
H_AT_06_05 = 1.7678443206045374
GAP_04_06 = 0.020410997260127565


class TestHFunction:
    def test_limit_at_mu(self):
        assert h_function(0.5, 0.5) == pytest.approx(2.0, abs=1e-12)

    def test_left_of_mu(self):
        assert h_function(0.4, 0.5) == pytest.approx(H_AT_04_05, abs=1e-10)

    def test_right_of_mu(self):
        assert h_function(0.6, 0.5) == pytest.approx(H_AT_06_05, abs=1e-10)

    def test_continuity_near_mu(self):
        for mu in (0.1, 0.5, 0.9):
            for delta in (1e-8, -1e-8):
                assert abs(h_function(mu + delta, mu) - 1.0 / (2 * mu * mu)) < 1e-4

    def test_domain(self):
        for bad in ((0.0, 0.5), (-0.2, 0.5), (0.5, 0.0)):
            with pytest.raises(DomainError):
                h_function(*bad)

    def test_nonnegative_on_positive_support(self):
        # h is a Bregman divergence of -ln divided by a square
        rng = SplitSeed(1).generator()
        for _ in range(200):
            l = float(rng.random() * 0.99 + 0.005)
            mu = float(rng.random() * 0.99 + 0.005)
            assert h_function(l, mu) >= 0.0


class TestLiaoGapBounds:
    def test_worked_case(self):
        gb = liao_gap_bounds([0.4, 0.6])
        assert gb.mean == pytest.approx(0.5, abs=1e-15)
        assert gb.variance == pytest.approx(0.01, abs=1e-15)
        assert gb.lower == pytest.approx(0.01 * H_AT_06_05, abs=1e-9)
        assert gb.upper == pytest.approx(0.01 * H_AT_04_05, abs=1e-9)
        gap = exact_jensen_gap([0.4, 0.6])
        assert gap == pytest.approx(GAP_04_06, abs=1e-12)
        assert gb.lower <= gap <= gb.upper

    def test_constant_samples_collapse_to_zero(self):
        gb = liao_gap_bounds([0.3, 0.3, 0.3])
        assert gb.lower == 0.0 and gb.upper == 0.0
        assert exact_jensen_gap([0.3, 0.3, 0.3]) == pytest.approx(0.0, abs=1e-15)

    def test_sandwich_holds_for_random_beta_sets(self):
        rng = SplitSeed(2).generator()
        for _ in range(100):
            n = int(rng.integers(2, 60))
            s = rng.beta(1.5, 4.0, size=n) * 0.98 + 0.01
            gb = liao_gap_bounds(s)
            gap = exact_jensen_gap(s)
            assert gb.lower - 1e-12 <= gap <= gb.upper + 1e-12

    def test_custom_support(self):
        gb = liao_gap_bounds([0.4, 0.6], support=(1e-12, 1.0))
        gap = exact_jensen_gap([0.4, 0.6])
        assert gb.lower <= gap <= gb.upper
        assert gb.support == (1e-12, 1.0)

    def test_nonpositive_samples_rejected(self):
        with pytest.raises(DomainError):
            liao_gap_bounds([0.5, 0.0])
        with pytest.raises(DomainError):
            liao_gap_bounds([])


class TestJensenGapApprox:
    def test_worked_case(self):
        # var 0.01, mean 0.5: 0.01 / (2 * 0.25) = 0.02
        assert jensen_gap_approx([0.4, 0.6]) == pytest.approx(0.02, abs=1e-15)

    def test_constant_samples_zero(self):
        assert jensen_gap_approx([0.7, 0.7]) == 0.0

    def test_scale_invariance_algebraic(self):
        rng = SplitSeed(3).generator()
        s = rng.random(40) * 0.8 + 0.1
        base = jensen_gap_approx(s)
        for lam in (0.1, 1.0, 10.0):
            assert jensen_gap_approx(lam * s) == pytest.approx(base, rel=1e-12)

    def test_exact_gap_scale_invariance(self):
        rng = SplitSeed(4).generator()
        s = rng.random(40) * 0.8 + 0.1
        base = exact_jensen_gap(s)
        for lam in (0.1, 1.0, 10.0):
            assert exact_jensen_gap(lam * s) == pytest.approx(base, abs=1e-12)

    def test_approximation_ratio_near_one_for_small_relative_variance(self):
        rng = SplitSeed(5).generator()
        for _ in range(50):
            mu = float(rng.random() * 0.8 + 0.1)
            u = rng.random(500) - 0.5  # bounded, zero-ish mean
            u -= u.mean()
            eps = 0.031 * mu  # var/mu^2 <= 1e-3 for |u| <= 0.5
            s = mu + eps * u
            if s.min() <= 0:
                continue
            gap = exact_jensen_gap(s)
            approx = jensen_gap_approx(s)
            if approx == 0.0:
                continue
            assert 0.9 <= gap / approx <= 1.1


def tiny_mlp(seed, rates=(0.35, 0.45), sizes=(2, 3, 3)):
    spec = DropoutSpec(sites=(("in", rates[0]), ("h1", rates[1])))
    return Mlp(list(sizes), spec, init_seed=SplitSeed(seed))


class TestEnumeration:
    def test_linear_unit_expectation(self):
        spec = DropoutSpec(sites=(("in", 0.5),))
        model = Mlp([1, 2], spec, params={"W0": np.array([[2.0, 0.0]]),
                                          "b0": np.zeros(2)})
        exact = enumerate_masks_exact(model, np.array([1.0]), alphas=(1.0,))
        assert exact.n_masks == 2
        # E over masks of softmax probabilities: mean of [sm(0,0), sm(2,0)]
        sm0 = np.array([0.5, 0.5])
        z = np.exp([2.0, 0.0])
        sm1 = z / z.sum()
        np.testing.assert_allclose(exact.e_p, (sm0 + sm1) / 2, atol=1e-14)

    def test_zero_rate_single_mask_equals_det(self):
        model = tiny_mlp(6, rates=(0.0, 0.0))
        x = np.array([0.5, -0.5])
        exact = enumerate_masks_exact(model, x, alphas=(0.5, 1.0))
        assert exact.n_masks == 1
        from dropoutlab.family import deterministic_predict

        det = deterministic_predict(model, x)
        np.testing.assert_allclose(exact.e_ln_p, det, atol=1e-14)

    def test_chain_inequality_exact(self):
        # E ln p <= (1/a) ln E p^a and ln Z <= 0, 1e-12 slack, random nets
        alphas = (0.25, 0.5, 0.75, 1.0)
        for trial in range(8):
            model = tiny_mlp(100 + trial, sizes=(2, 4, 3))  # 6 droppable rows
            x = SplitSeed(200 + trial).generator().standard_normal(2)
            exact = enumerate_masks_exact(model, x, alphas=alphas)
            for a in alphas:
                assert np.all(exact.e_ln_p <= exact.ln_pow_mean[a] + 1e-12)
                assert exact.ln_z[a] <= 1e-12
            assert abs(exact.ln_z[1.0]) < 1e-12
            # monotone in alpha as well
            stack = np.stack([exact.ln_pow_mean[a] for a in alphas])
            assert np.all(np.diff(stack, axis=0) >= -1e-12)

    def test_weights_sum_to_one(self):
        model = tiny_mlp(7)
        exact = enumerate_masks_exact(model, np.array([1.0, 2.0]), alphas=(1.0,))
        # ln Z at alpha=1 is ln sum_c E p_c = ln E sum_c p_c = ln 1
        assert abs(exact.ln_z[1.0]) < 1e-12

    def test_row_limit_guard(self):
        spec = DropoutSpec(sites=(("in", 0.5),))
        model = Mlp([25, 2], spec, init_seed=SplitSeed(8))
        with pytest.raises(DomainError):
            enumerate_masks_exact(model, np.zeros(25))

    def test_per_step_masks_rejected(self):
        from dropoutlab.lstm import LstmLm

        spec = DropoutSpec(sites=(("x", 0.5), ("h", 0.5)), sharing=PER_STEP)
        model = LstmLm(4, 2, 2, spec, init_seed=SplitSeed(9))
        with pytest.raises(DomainError):
            enumerate_masks_exact(model, np.array([0, 1]))


class TestBoundReport:
    def test_zero_rate_model_gap_and_z_exactly_zero(self):
        model = tiny_mlp(10, rates=(0.0, 0.0))
        rng = SplitSeed(11).generator()
        x = rng.standard_normal((4, 2))
        y = rng.integers(0, 3, 4)
        report = bound_report(model, (x, y), alpha=0.5, lam=1.0, samples=5,
                              seed=SplitSeed(12), weight_decay=0.01)
        assert report.jensen_gap == 0.0
        assert report.log_z_term == 0.0
        assert report.prior_term > 0.0

    def test_gap_nonnegative_and_z_nonpositive(self):
        model = tiny_mlp(13)
        rng = SplitSeed(14).generator()
        x = rng.standard_normal((6, 2))
        y = rng.integers(0, 3, 6)
        for alpha in (0.0, 0.5, 1.0):
            r = bound_report(model, (x, y), alpha=alpha, lam=1.0, samples=32,
                             seed=SplitSeed(15), weight_decay=0.0)
            assert r.jensen_gap >= -1e-12
            assert r.log_z_term <= 1e-12

    def test_matches_enumeration_within_three_ses(self):
        # <= 7 droppable rows; compare the data term against the exact value
        model = tiny_mlp(16, sizes=(2, 5, 3))
        x = SplitSeed(17).generator().standard_normal((1, 2))
        y = np.array([1])
        exact = enumerate_masks_exact(model, x[0], alphas=(0.5,))
        s = 50_000
        report = bound_report(model, (x, y), alpha=0.5, lam=1.0, samples=s,
                              seed=SplitSeed(18), weight_decay=0.0)
        _, matrix = mc_predict(model, x[0],
                               FamilyParams(alpha=0.5, lam=1.0, samples=s),
                               SplitSeed(19))
        se = float(np.std(matrix[:, 1], ddof=1)) / math.sqrt(s)
        assert abs(report.data_term_mc - exact.e_ln_p[1]) <= 3 * se

    def test_variance_reduction_trend_in_lambda(self):
        # smaller eval rate -> smaller prediction variance -> smaller gap
        model = tiny_mlp(20)
        rng = SplitSeed(21).generator()
        x = rng.standard_normal((5, 2))
        y = rng.integers(0, 3, 5)
        gaps = []
        for lam in (1.0, 0.5, 0.25, 0.0):
            r = bound_report(model, (x, y), alpha=0.0, lam=lam, samples=4000,
                             seed=SplitSeed(22), weight_decay=0.0)
            gaps.append(r.jensen_gap)
        assert gaps[-1] == 0.0
        assert all(later <= earlier + 0.02 for earlier, later in zip(gaps, gaps[1:]))

    def test_empty_dataset_rejected(self):
        model = tiny_mlp(23)
        with pytest.raises(DomainError):
            bound_report(model, (np.zeros((0, 2)), np.zeros(0, dtype=int)), 0.5, 1.0, 4,
                         SplitSeed(24), 0.0)


class TestKlFactorization:
    def test_matching_distributions_give_zero(self):
        res = kl_factorization_check(p_mix=0.0, theta=[0.0], sigma=1.0, sigma_p=1.0,
                                     t_steps=3, mc_samples=20_000, seed=SplitSeed(25))
        assert res.closed_form_single == pytest.approx(0.0, abs=1e-15)
        assert abs(res.kl_product_mc) <= 3 * res.se_product + 1e-12

    def test_pure_gaussian_closed_form(self):
        # KL(N(1,1) || N(0,1)) = 0.5; product over T=3 steps: 1.5 exactly
        res = kl_factorization_check(p_mix=0.0, theta=[1.0], sigma=1.0, sigma_p=1.0,
                                     t_steps=3, mc_samples=200_000, seed=SplitSeed(100))
        assert res.closed_form_single == pytest.approx(0.5, abs=1e-15)
        assert res.closed_form_product == pytest.approx(1.5, abs=1e-15)
        assert abs(res.kl_product_mc - 1.5) <= 3 * res.se_product
        assert abs(res.kl_single_mc - 0.5) <= 3 * res.se_single

    def test_mixture_product_is_t_times_single(self):
        res = kl_factorization_check(p_mix=0.3, theta=[0.8, -0.4], sigma=0.5,
                                     sigma_p=1.0, t_steps=4, mc_samples=400_000,
                                     seed=SplitSeed(27))
        combined_se = math.sqrt(res.se_product**2 + 16 * res.se_single**2)
        assert abs(res.kl_product_mc - 4 * res.kl_single_mc) <= 3 * combined_se
        assert res.closed_form_single is None

    def test_domain_checks(self):
        with pytest.raises(DomainError):
            kl_factorization_check(0.3, [0.1], sigma=0.0, sigma_p=1.0, t_steps=2,
                                   mc_samples=100, seed=SplitSeed(28))
        with pytest.raises(DomainError):
            kl_factorization_check(0.3, np.zeros(9), sigma=1.0, sigma_p=1.0, t_steps=2,
                                   mc_samples=100, seed=SplitSeed(29))
