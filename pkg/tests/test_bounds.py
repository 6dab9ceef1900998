import math

import numpy as np
import pytest

from eiglab import kernels
from eiglab.bounds import (
    BoundConfig,
    ConditionalGaussianPosterior,
    GaussianMarginal,
    LogitsMarginal,
    _contrastive_parts,
    ace_bound,
    ba_bound,
    marginal_bound,
    trace_csv,
    train_variational,
    vnmc_bound,
)
from eiglab.errors import ConfigError
from eiglab.models import ExactLgPosteriorProposal, build_model
from eiglab.rng import RngStream

HALF_LOG_2 = 0.34657359027997264
KL_DOUBLED_VARIANCE = 0.09657359027997264


@pytest.fixture
def lg():
    return build_model("lg")


def exact_marginal(lg, xi):
    mean, var = lg.marginal_params(xi)
    return GaussianMarginal(mean=mean, log_scale=0.5 * math.log(var))


class _ExactPosteriorQ(ExactLgPosteriorProposal):
    """Proposal protocol plus the matched-row density the bounds expect."""

    def log_density(self, thetas, ys, xi):
        return self.logpdf_batch(np.atleast_2d(thetas)[:, None, :], np.asarray(ys), xi)[:, 0]


class TestMarginalBound:
    def test_exact_marginal_recovers_oracle(self, lg):
        est = marginal_bound(lg, [1.0], exact_marginal(lg, [1.0]), 10_000, RngStream(1))
        assert abs(est.value - HALF_LOG_2) < 4 * est.std_error

    def test_zero_design_gives_zero(self, lg):
        est = marginal_bound(lg, [0.0], exact_marginal(lg, [0.0]), 5_000, RngStream(2))
        assert abs(est.value) < 4 * max(est.std_error, 1e-12)

    def test_wrong_marginal_exceeds_oracle_by_its_kl(self, lg):
        mean, var = lg.marginal_params([1.0])
        wrong = GaussianMarginal(mean=mean, log_scale=0.5 * math.log(2 * var))
        est = marginal_bound(lg, [1.0], wrong, 20_000, RngStream(3))
        assert abs(est.value - (HALF_LOG_2 + KL_DOUBLED_VARIANCE)) < 4 * est.std_error


class TestPosteriorBound:
    def test_prior_as_posterior_gives_zero(self, lg):
        class PriorQ:
            def log_density(self, thetas, ys, xi):
                return lg.log_prior_n(thetas)

        est = ba_bound(lg, [1.0], PriorQ(), 5_000, RngStream(4))
        assert est.value == 0.0  # terms are identically log p - log p

    def test_exact_posterior_recovers_oracle(self, lg):
        est = ba_bound(lg, [1.0], _ExactPosteriorQ(lg, [1.0]), 10_000, RngStream(5))
        assert abs(est.value - HALF_LOG_2) < 4 * est.std_error

    def test_trained_posterior_stays_below_oracle(self, lg):
        result = train_variational(lg, [1.0], BoundConfig("ba", steps=500), RngStream(6))
        est = ba_bound(lg, [1.0], result.approx, 10_000, RngStream(7))
        assert est.value <= HALF_LOG_2 + 3 * est.std_error


class TestContrastiveBounds:
    def test_vnmc_with_exact_posterior_any_m(self, lg):
        q = _ExactPosteriorQ(lg, [1.0])
        for m in (1, 4):
            est = vnmc_bound(lg, [1.0], q, 8_000, m, RngStream(8))
            assert abs(est.value - HALF_LOG_2) < 4 * est.std_error

    def test_vnmc_tightens_monotonically_in_m(self, lg):
        prior_q = _PriorProposalQ(lg)
        means, ses = [], []
        for m in (1, 4, 16):
            est = vnmc_bound(lg, [1.0], prior_q, 20_000, m, RngStream(9))
            means.append(est.value)
            ses.append(est.std_error)
        for i in range(len(means) - 1):
            assert means[i + 1] <= means[i] + 3 * math.hypot(ses[i], ses[i + 1])
        assert means[0] >= HALF_LOG_2 - 3 * ses[0]  # upper bound direction

    def test_ace_with_exact_posterior(self, lg):
        est = ace_bound(lg, [1.0], _ExactPosteriorQ(lg, [1.0]), 8_000, 1, RngStream(10))
        assert abs(est.value - HALF_LOG_2) < 4 * est.std_error

    def test_pce_zero_design_is_exactly_zero(self, lg):
        est = ace_bound(lg, [0.0], None, 4_000, 1, RngStream(11))
        assert abs(est.value) < 1e-12

    def test_pce_increases_in_m_and_respects_caps(self, lg):
        means, ses = [], []
        for m in (1, 4, 16, 64):
            est = ace_bound(lg, [1.0], None, 20_000, m, RngStream(12))
            means.append(est.value)
            ses.append(est.std_error)
            assert est.value <= min(HALF_LOG_2 + 3 * est.std_error, math.log(m + 1))
        for i in range(len(means) - 1):
            assert means[i + 1] >= means[i] - 3 * math.hypot(ses[i], ses[i + 1])

    def test_ace_and_vnmc_differ_exactly_by_the_outer_term(self, lg):
        q = _ExactPosteriorQ(lg, [0.7])
        n, m = 512, 8
        loglik0, w0, logw = _contrastive_parts(lg, np.array([0.7]), q, n, m, RngStream(13), False)
        want_vnmc = float(np.mean(loglik0 - kernels.logmeanexp_2d(logw)))
        want_ace = float(np.mean(loglik0 - kernels.logmeanexp_2d(np.column_stack([w0, logw]))))
        got_vnmc = vnmc_bound(lg, [0.7], q, n, m, RngStream(13)).value
        got_ace = ace_bound(lg, [0.7], q, n, m, RngStream(13)).value
        assert got_vnmc == want_vnmc
        assert got_ace == want_ace

    def test_shared_contrasts_require_prior(self, lg):
        with pytest.raises(ConfigError):
            ace_bound(lg, [1.0], _ExactPosteriorQ(lg, [1.0]), 16, 4, RngStream(0), shared_contrasts=True)


class _PriorProposalQ:
    """Prior draws packaged behind the proposal-with-density protocol."""

    def __init__(self, model):
        self.model = model

    def sample_batch(self, ys, xi, m, rng):
        return self.model.sample_prior_n(ys.shape[0] * m, rng).reshape(ys.shape[0], m, -1)

    def logpdf_batch(self, thetas, ys, xi):
        n, m = thetas.shape[0], thetas.shape[1]
        return self.model.log_prior_n(thetas.reshape(n * m, -1)).reshape(n, m)

    def log_density(self, thetas, ys, xi):
        return self.model.log_prior_n(thetas)


class TestTraining:
    def test_ba_training_reaches_oracle_within_slack(self, lg):
        result = train_variational(lg, [1.0], BoundConfig("ba", steps=2000), RngStream(20))
        est = ba_bound(lg, [1.0], result.approx, 10_000, RngStream(21))
        assert est.value > HALF_LOG_2 - 0.02 - 4 * est.std_error
        assert est.value < HALF_LOG_2 + 3 * est.std_error

    def test_marginal_training_reaches_oracle_within_slack(self, lg):
        result = train_variational(lg, [1.0], BoundConfig("marginal", steps=2000), RngStream(22))
        est = marginal_bound(lg, [1.0], result.approx, 10_000, RngStream(23))
        assert est.value < HALF_LOG_2 + 0.02 + 4 * est.std_error
        assert est.value > HALF_LOG_2 - 3 * est.std_error

    def test_zero_steps_returns_initialization_unchanged(self, lg):
        a = train_variational(lg, [1.0], BoundConfig("ba", steps=0), RngStream(24))
        b = ConditionalGaussianPosterior(1, 1, RngStream(24).child("init"))
        assert a.trace == []
        for p, q in zip(a.approx.params, b.params):
            assert np.array_equal(p, q)

    def test_training_trace_is_bit_reproducible(self, lg):
        a = train_variational(lg, [1.0], BoundConfig("vnmc", m_contrastive=4, steps=40), RngStream(25))
        b = train_variational(lg, [1.0], BoundConfig("vnmc", m_contrastive=4, steps=40), RngStream(25))
        assert a.trace == b.trace
        for p, q in zip(a.approx.params, b.params if hasattr(b, "params") else b.approx.params):
            assert np.array_equal(p, q)

    def test_pce_has_nothing_to_train(self, lg):
        with pytest.raises(ConfigError):
            train_variational(lg, [1.0], BoundConfig("pce"), RngStream(0))

    def test_logits_marginal_trains_on_finite_outcomes(self):
        pb = build_model("probit")
        result = train_variational(pb, [1.5], BoundConfig("marginal", steps=600), RngStream(26))
        assert isinstance(result.approx, LogitsMarginal)
        est = marginal_bound(pb, [1.5], result.approx, 10_000, RngStream(27))
        oracle = pb.closed_form_eig([1.5])
        assert est.value > oracle - 3 * est.std_error  # upper bound
        assert est.value < oracle + 0.05  # and reasonably tight after training

    def test_trace_csv_header(self):
        text = trace_csv([(0, 0.5, 0.01), (1, 0.6, 0.02)])
        lines = text.strip().splitlines()
        assert lines[0] == "step,bound_estimate,std_error"
        assert len(lines) == 3

    @pytest.mark.parametrize("bound", ["marginal", "ba", "vnmc", "ace"])
    def test_training_objective_gradients_match_finite_differences(self, lg, bound):
        # common random numbers: draws frozen once, objective rebuilt per
        # perturbed parameter block
        from eiglab import autodiff as ad
        from eiglab.bounds import _bound_objective_t, _fresh_approx, _step_draws

        config = BoundConfig(bound, m_contrastive=3, batch_size=8, steps=1)
        approx = _fresh_approx(lg, bound, RngStream(30))
        draws = _step_draws(lg, np.array([0.8]), config, RngStream(31))
        blocks = range(len(approx.params)) if bound == "marginal" else (1, 4, 5)
        for idx in blocks:
            def f(leaf, _idx=idx):
                leaves = [leaf if j == _idx else ad.Tensor(p)
                          for j, p in enumerate(approx.params)]
                obj, _ = _bound_objective_t(lg, np.array([0.8]), approx, config, draws, leaves)
                return obj

            err = ad.finite_difference_check(f, approx.params[idx], 1e-5)
            assert err < 1e-4, f"{bound} block {idx}: {err}"
