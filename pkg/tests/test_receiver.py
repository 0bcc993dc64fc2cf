"""Receiver message operators against quadrature oracles, plus the full loop."""

import math

import numpy as np
import pytest

from jointrx.channel import transmit
from jointrx.errors import BothFlat, DegenerateSymbolBelief, ZeroModulusSymbol
from jointrx.gaussians import ScalarGaussian, product
from jointrx.mapping import Constellation, map_bits
from jointrx.receiver import (
    ReceiverConfig,
    ReceiverState,
    channel_belief_combine,
    channel_smoothing,
    detector_inputs,
    ep_site_update,
    ga_channel_obs_message,
    mf_channel_obs_message,
    pilot_obs_message,
    run_receiver,
)
from jointrx.rng import philox
from jointrx.selfcheck import (
    mf_obs_oracle,
    quad_moments,
    scalar_log_density,
    symbol_averaged_likelihood_oracle,
    tilted_site_oracle,
)

GAMMA12 = 10.0 ** 1.2


def bpsk_pair():
    """A two-point unit-energy alphabet."""
    return Constellation(np.array([1.0 + 0j, -1.0 + 0j]), np.array([[0], [1]]))


def fresh_state(n):
    return ReceiverState(
        obs_mean=np.zeros(n, dtype=complex),
        obs_prec=np.zeros(n),
        ext_mean=np.zeros(n, dtype=complex),
        ext_prec=np.zeros(n),
        belief_mean=np.zeros(n, dtype=complex),
        belief_prec=np.zeros(n),
        llr_feedback=np.zeros(4 * n),
    )


class TestPilotObsMessage:
    def test_unit_pilot_formula(self):
        got = pilot_obs_message(0.7 - 0.2j, 1.0, 4.0)
        assert got.mean == pytest.approx(0.7 - 0.2j)
        assert got.variance == pytest.approx(0.25)

    def test_unit_modulus_pilot_variance(self, qpsk):
        for s in qpsk.points:
            got = pilot_obs_message(0.3 + 0.1j, s, 8.0)
            assert got.variance == pytest.approx(1.0 / 8.0)

    def test_zero_symbol_raises(self):
        with pytest.raises(ZeroModulusSymbol):
            pilot_obs_message(1.0, 0.0, 1.0)

    def test_matches_quadrature_normalisation(self):
        # The observation factor, read as a density in the channel
        # coefficient, must normalise to exactly this Gaussian.
        y, x, gamma = 0.4 + 0.9j, 0.6 - 0.8j, 5.0
        got = pilot_obs_message(y, x, gamma)

        def logd(grid):
            return -gamma * np.abs(y - grid * x) ** 2

        mean, var = quad_moments(logd, got.mean, 8.0 * math.sqrt(got.variance))
        assert got.mean == pytest.approx(mean, rel=1e-9)
        assert got.variance == pytest.approx(var, rel=1e-9)


class TestGaChannelObsMessage:
    def test_point_mass_pmf_equals_pilot_message(self, qam16):
        y, gamma = 1.1 - 0.4j, 6.0
        for idx in (0, 5, 10):
            pmf = np.zeros(16)
            pmf[idx] = 1.0
            got = ga_channel_obs_message(y, pmf, qam16, gamma)
            want = pilot_obs_message(y, qam16.points[idx], gamma)
            assert got.mean == pytest.approx(want.mean)
            assert got.variance == pytest.approx(want.variance)

    def test_uniform_qpsk_phase_symmetry(self, qpsk):
        # Opposite phases cancel: the matched mean is zero and the
        # variance carries the full spread.
        got = ga_channel_obs_message(1.0 + 0j, np.full(4, 0.25), qpsk, 10.0)
        assert got.mean == pytest.approx(0.0, abs=1e-12)
        assert got.variance == pytest.approx(1.0 + 0.1)

    def test_uniform_qam_matches_quadrature(self, qam16):
        y, gamma = 0.8 + 0.3j, 10.0
        got = ga_channel_obs_message(y, np.full(16, 1 / 16), qam16, gamma)
        # The mixture over symbols, as a density in the channel, weights
        # each component by pmf / |s|^2; the oracle integrates the raw
        # density and must agree.
        mean, var = symbol_averaged_likelihood_oracle(
            y, np.full(16, 1 / 16), qam16.points, gamma
        )
        assert got.mean == pytest.approx(mean, rel=1e-6)
        assert got.variance == pytest.approx(var, rel=1e-6)

    def test_zero_modulus_point_raises(self):
        const = Constellation(np.array([0.0 + 0j, math.sqrt(2.0) + 0j]), np.array([[0], [1]]))
        with pytest.raises(ZeroModulusSymbol):
            ga_channel_obs_message(1.0, np.array([0.5, 0.5]), const, 1.0)


class TestMfChannelObsMessage:
    def test_point_mass_belief_equals_pilot_message(self, qpsk):
        y, gamma = -0.3 + 0.8j, 7.0
        s = qpsk.points[2]
        got = mf_channel_obs_message(y, s, 0.0, gamma)
        want = pilot_obs_message(y, s, gamma)
        assert got.mean == pytest.approx(want.mean)
        assert got.variance == pytest.approx(want.variance)

    def test_zero_mean_unit_variance(self):
        got = mf_channel_obs_message(0.9 + 0.1j, 0.0, 1.0, 3.0)
        assert got.mean == pytest.approx(0.0)
        assert got.variance == pytest.approx(1.0 / 3.0)

    def test_degenerate_belief_raises(self):
        with pytest.raises(DegenerateSymbolBelief):
            mf_channel_obs_message(1.0, 0.0, 0.0, 1.0)

    def test_matches_discrete_expectation_oracle(self, qam16, rng):
        # Belief moments induced by a random symbol pmf; the message must
        # equal the quadrature moments of exp(E_x[log f]).
        y, gamma = 0.5 - 0.7j, 6.0
        pmf = rng.dirichlet(np.ones(16))
        mu = complex(np.dot(pmf, qam16.points))
        second = float(np.dot(pmf, np.abs(qam16.points) ** 2))
        got = mf_channel_obs_message(y, mu, second - abs(mu) ** 2, gamma)
        mean, var = mf_obs_oracle(y, pmf, qam16.points, gamma)
        assert got.mean == pytest.approx(mean, rel=1e-7)
        assert got.variance == pytest.approx(var, rel=1e-7)


class TestEpSiteUpdate:
    def test_single_point_alphabet_is_exact_and_fixed(self):
        const = Constellation(np.array([1.0 + 0j]), np.zeros((1, 0), dtype=np.uint8))
        y, gamma = 0.6 - 0.2j, 4.0
        cavity = ScalarGaussian.from_moments(0.2 + 0.1j, 0.5)
        site, belief = ep_site_update(
            y, np.array([1.0]), cavity, ScalarGaussian.flat(), const, gamma, step=1.0
        )
        exact_site = pilot_obs_message(y, 1.0 + 0j, gamma)
        assert site.mean == pytest.approx(exact_site.mean)
        assert site.precision == pytest.approx(exact_site.precision)
        want_belief = product(cavity, exact_site)
        assert belief.mean == pytest.approx(want_belief.mean)
        assert belief.precision == pytest.approx(want_belief.precision)
        # Undamped, the refinement is already a fixed point.
        site2, belief2 = ep_site_update(
            y, np.array([1.0]), cavity, site, const, gamma, step=1.0
        )
        assert site2.mean == pytest.approx(site.mean)
        assert site2.precision == pytest.approx(site.precision)
        assert belief2.precision == pytest.approx(belief.precision)

    def test_flat_cavity_single_symbol_equals_pilot(self, qpsk):
        y, gamma = 0.4 + 0.4j, 9.0
        pmf = np.zeros(4)
        pmf[1] = 1.0
        site, belief = ep_site_update(
            y, pmf, ScalarGaussian.flat(), ScalarGaussian.flat(), qpsk, gamma, step=1.0
        )
        want = pilot_obs_message(y, qpsk.points[1], gamma)
        assert site.mean == pytest.approx(want.mean)
        assert site.precision == pytest.approx(want.precision)
        assert belief.mean == pytest.approx(want.mean)

    def test_two_symbol_belief_matches_quadrature(self, rng):
        const = bpsk_pair()
        y, gamma = 0.3 - 0.5j, 6.0
        cavity = ScalarGaussian.from_moments(0.4 + 0.2j, 0.3)
        pmf = np.array([0.7, 0.3])
        _, belief = ep_site_update(
            y, pmf, cavity, ScalarGaussian.flat(), const, gamma, step=1.0
        )
        mean, var = tilted_site_oracle(y, pmf, cavity, const.points, gamma)
        assert belief.mean == pytest.approx(mean, rel=1e-7)
        assert belief.variance == pytest.approx(var, rel=1e-7)

    def test_damping_interpolates_natural_parameters(self):
        const = bpsk_pair()
        y, gamma = 1.2 + 0j, 5.0
        cavity = ScalarGaussian.from_moments(0.5, 0.4)
        site0 = ScalarGaussian.from_moments(0.1, 2.0)
        pmf = np.array([0.5, 0.5])
        full_site, full_belief = ep_site_update(y, pmf, cavity, site0, const, gamma, step=1.0)
        half_site, half_belief = ep_site_update(y, pmf, cavity, site0, const, gamma, step=0.5)
        old_belief = product(cavity, site0)
        assert half_belief.precision == pytest.approx(
            0.5 * full_belief.precision + 0.5 * old_belief.precision
        )
        assert half_site.precision == pytest.approx(half_belief.precision - cavity.precision)

    def test_negative_precision_refinement_skips(self):
        # A sharp cavity against a widely bimodal tilted density forces a
        # negative site precision; the policy keeps the old site.
        const = bpsk_pair()
        cavity = ScalarGaussian.from_moments(0.0, 0.01)
        site0 = ScalarGaussian.flat()
        site, belief = ep_site_update(
            2.0 + 0j, np.array([0.5, 0.5]), cavity, site0, const, 100.0, step=1.0
        )
        assert site.is_flat
        assert belief.mean == pytest.approx(cavity.mean)
        assert belief.precision == pytest.approx(cavity.precision)

    def test_unknown_policy_rejected(self, qpsk):
        with pytest.raises(ValueError):
            ep_site_update(
                0j,
                np.full(4, 0.25),
                ScalarGaussian.flat(),
                ScalarGaussian.flat(),
                qpsk,
                1.0,
                policy="clip",
            )


class TestChannelSmoothing:
    def test_pilot_only_extrinsics_interpolate(self, small_frame, small_prior):
        state = fresh_state(small_frame.n_total)
        rng = philox(3)
        h = small_prior.draw(rng)
        y = transmit(
            np.where(np.isin(np.arange(13), small_frame.pilot_idx), 1.0, 0.0).astype(complex),
            h,
            GAMMA12,
            rng,
        )
        state.obs_mean[small_frame.pilot_idx] = y[small_frame.pilot_idx]
        state.obs_prec[small_frame.pilot_idx] = GAMMA12
        channel_smoothing(state, small_prior)
        ext_var = 1.0 / state.ext_prec[small_frame.data_idx]
        prior_var = np.diag(small_prior.cov).real[small_frame.data_idx]
        assert np.all(ext_var > 0.0)
        assert np.all(ext_var < prior_var)


class TestChannelBeliefCombine:
    def test_flat_observation_returns_extrinsic(self):
        ext = ScalarGaussian.from_moments(1 + 1j, 0.5)
        got = channel_belief_combine(ScalarGaussian.flat(), ext)
        assert got.mean == ext.mean and got.precision == ext.precision

    def test_equal_precisions_give_midpoint(self):
        got = channel_belief_combine(ScalarGaussian(1.0, 2.0), ScalarGaussian(0.0, 2.0))
        assert got.mean == pytest.approx(0.5)

    def test_matches_product(self, rng):
        for _ in range(50):
            a = ScalarGaussian(complex(rng.normal(), rng.normal()), float(rng.uniform(0.1, 5)))
            b = ScalarGaussian(complex(rng.normal(), rng.normal()), float(rng.uniform(0.1, 5)))
            got = channel_belief_combine(a, b)
            want = product(a, b)
            assert got.mean == pytest.approx(want.mean)
            assert got.precision == pytest.approx(want.precision)

    def test_both_flat_raises(self):
        with pytest.raises(BothFlat):
            channel_belief_combine(ScalarGaussian.flat(), ScalarGaussian.flat())

    def test_collapse_to_mean(self):
        got = channel_belief_combine(
            ScalarGaussian(1.0, 1.0), ScalarGaussian(0.0, 1.0), collapse_to_mean=True
        )
        assert got.mean == pytest.approx(0.5)
        assert got.precision == math.inf


class TestDetectorInputs:
    def make_state(self):
        state = fresh_state(6)
        rng = philox(9)
        state.ext_mean = rng.normal(size=6) + 1j * rng.normal(size=6)
        state.ext_prec = rng.uniform(1.0, 5.0, 6)
        state.belief_mean = rng.normal(size=6) + 1j * rng.normal(size=6)
        state.belief_prec = rng.uniform(1.0, 5.0, 6)
        return state, np.array([1, 3, 4])

    def test_point_estimate_equals_mean_field_with_collapsed_variance(self):
        # The point-estimate algorithm is exactly the mean-field one with
        # the belief variance zeroed; everything else matches bit for bit.
        state, didx = self.make_state()
        mf_mean, mf_var, mf_variant = detector_inputs("bp-mf", state, didx)
        em_mean, em_var, em_variant = detector_inputs("bp-em", state, didx)
        assert np.array_equal(mf_mean, em_mean)
        assert mf_variant == em_variant == "mean-field"
        assert np.all(em_var == 0.0)
        assert np.all(mf_var > 0.0)

    def test_extrinsic_algorithms_share_moments(self):
        state, didx = self.make_state()
        ga = detector_inputs("bp-ga", state, didx)
        ep = detector_inputs("ep", state, didx)
        assert np.array_equal(ga[0], ep[0])
        assert np.array_equal(ga[1], ep[1])
        assert ga[2] == ep[2] == "extrinsic"
        assert np.array_equal(ga[0], state.ext_mean[didx])

    def test_known_channel_uses_belief_mean_with_zero_variance(self):
        state, didx = self.make_state()
        mean, var, variant = detector_inputs("perfect-csi", state, didx)
        assert np.array_equal(mean, state.belief_mean[didx])
        assert np.all(var == 0.0)
        assert variant == "mean-field"

    def test_unknown_algorithm_rejected(self):
        state, didx = self.make_state()
        with pytest.raises(ValueError):
            detector_inputs("bp", state, didx)


class TestReceiverConfig:
    def test_defaults_are_valid(self):
        cfg = ReceiverConfig("ep", 10.0)
        assert cfg.iterations == 15 and cfg.ep_step == 0.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"algorithm": "bp"},
            {"noise_precision": 0.0},
            {"noise_precision": -1.0},
            {"iterations": 0},
            {"ep_step": 0.0},
            {"ep_step": 1.5},
            {"ep_policy": "clip"},
            {"symbol_exponent": "cubed"},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        base = dict(algorithm="ep", noise_precision=10.0)
        base.update(kwargs)
        with pytest.raises(ValueError):
            ReceiverConfig(**base)


class TestReceiverState:
    def test_validate_accepts_fresh_state(self):
        fresh_state(5).validate()

    def test_rejects_shape_mismatch(self):
        state = fresh_state(5)
        state.ext_prec = np.zeros(4)
        with pytest.raises(ValueError):
            state.validate()

    def test_rejects_negative_precision(self):
        state = fresh_state(5)
        state.obs_prec[2] = -1.0
        with pytest.raises(ValueError):
            state.validate()

    def test_rejects_nonfinite_mean(self):
        state = fresh_state(5)
        state.belief_mean[0] = np.nan
        with pytest.raises(ValueError):
            state.validate()

    def test_rejects_unnormalised_beta(self):
        state = fresh_state(5)
        state.beta = np.full((5, 4), 0.3)
        with pytest.raises(ValueError):
            state.validate()


def send_frame(layout, prior, seed, gamma_tx):
    """Encode a random block, map it, and push it through the channel."""
    from jointrx.coding import encode, interleave

    rng = philox(seed)
    info = rng.integers(0, 2, layout.code.info_length).astype(np.uint8)
    coded = encode(layout.code, info)
    slots = np.concatenate([coded, np.zeros(layout.n_filler, dtype=np.uint8)])
    bits = interleave(layout.interleaver, slots).reshape(
        layout.n_data, layout.constellation.bits_per_symbol
    )
    x = np.zeros(layout.n_total, dtype=complex)
    x[layout.pilot_idx] = layout.pilot_symbols
    x[layout.data_idx] = map_bits(layout.constellation, bits)
    h = prior.draw(philox(seed, 1))
    y = transmit(x, h, gamma_tx, philox(seed, 2))
    return info, coded, h, y


class TestRunReceiver:
    def test_noise_free_known_channel_decodes_perfectly(self, small_frame, small_prior):
        info, coded, h, y = send_frame(small_frame, small_prior, 21, math.inf)
        cfg = ReceiverConfig("perfect-csi", GAMMA12, iterations=2)
        info_hat, diags = run_receiver(
            small_frame, small_prior, y, cfg, h_true=h, info_true=info, coded_true=coded
        )
        assert np.array_equal(info_hat, info)
        assert diags[-1].info_bit_errors == 0
        assert diags[-1].coded_bit_errors == 0

    @pytest.mark.parametrize("algo", ["bp-ga", "ep", "bp-mf", "bp-em"])
    def test_deep_noise_gives_chance_level_ber(self, algo, small_frame, small_prior):
        gamma = 10.0 ** (-2.0)  # -20 dB
        errors = bits = 0
        for seed in range(40):
            info, coded, h, y = send_frame(small_frame, small_prior, 100 + seed, gamma)
            cfg = ReceiverConfig(algo, gamma, iterations=3)
            info_hat, _ = run_receiver(small_frame, small_prior, y, cfg)
            errors += int(np.sum(info_hat != info))
            bits += info.size
        assert abs(errors / bits - 0.5) < 0.1

    def test_first_iteration_channel_estimate_is_algorithm_independent(
        self, small_frame, small_prior
    ):
        # Iteration one has no feedback, so every estimating algorithm
        # runs the same pilot-only smoothing pass.
        info, coded, h, y = send_frame(small_frame, small_prior, 33, GAMMA12)
        mses = {}
        for algo in ("bp-ga", "ep", "bp-mf", "bp-em"):
            cfg = ReceiverConfig(algo, GAMMA12, iterations=1)
            _, diags = run_receiver(small_frame, small_prior, y, cfg, h_true=h)
            mses[algo] = diags[0].channel_mse
        values = list(mses.values())
        assert all(v == pytest.approx(values[0], rel=1e-12) for v in values)

    def test_feedback_improves_channel_estimate(self, small_frame, small_prior):
        info, coded, h, y = send_frame(small_frame, small_prior, 55, GAMMA12)
        cfg = ReceiverConfig("bp-mf", GAMMA12, iterations=8)
        _, diags = run_receiver(small_frame, small_prior, y, cfg, h_true=h)
        assert diags[-1].channel_mse < diags[0].channel_mse

    def test_ep_skip_counter_is_reported(self, small_frame, small_prior):
        info, coded, h, y = send_frame(small_frame, small_prior, 8, GAMMA12)
        cfg = ReceiverConfig("ep", GAMMA12, iterations=5)
        _, diags = run_receiver(small_frame, small_prior, y, cfg)
        assert all(d.ep_skipped >= 0 for d in diags)

    def test_diagnostics_are_none_without_truth(self, small_frame, small_prior):
        _, _, _, y = send_frame(small_frame, small_prior, 13, GAMMA12)
        cfg = ReceiverConfig("bp-ga", GAMMA12, iterations=2)
        _, diags = run_receiver(small_frame, small_prior, y, cfg)
        assert diags[0].channel_mse is None
        assert diags[0].info_bit_errors is None

    def test_rejects_wrong_observation_shape(self, small_frame, small_prior):
        cfg = ReceiverConfig("bp-mf", GAMMA12)
        with pytest.raises(ValueError):
            run_receiver(small_frame, small_prior, np.zeros(7, dtype=complex), cfg)

    def test_known_channel_algorithm_requires_truth(self, small_frame, small_prior):
        cfg = ReceiverConfig("perfect-csi", GAMMA12)
        with pytest.raises(ValueError):
            run_receiver(small_frame, small_prior, np.zeros(13, dtype=complex), cfg)
