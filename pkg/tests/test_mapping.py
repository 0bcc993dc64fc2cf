"""Constellations, the committed labelling table, and soft bit/symbol messages."""

import math
from importlib.resources import as_file, files

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from jointrx.errors import AllZeroLikelihood
from jointrx.mapping import (
    Constellation,
    batch_gaussian_symbol_loglik,
    bit_llrs_from_symbol_msg,
    gaussian_symbol_likelihoods,
    map_bits,
    qam16_gray,
    qpsk_gray,
    symbol_extrinsic,
)
def _channel_grid(center: complex, var: float, half_sigmas: float = 8.0, n: int = 301):
    """Square grid over the channel coefficient plus the cell area."""
    half = half_sigmas * math.sqrt(var)
    axis = np.linspace(-half, half, n)
    cell = (axis[1] - axis[0]) ** 2
    re, im = np.meshgrid(axis, axis)
    return center + re + 1j * im, cell


def bundled_table():
    with as_file(files("jointrx").joinpath("data", "qam16_gray.map")) as path:
        return Constellation.from_table(path)


class TestConstellation:
    def test_qam16_matches_committed_table_exactly(self, qam16):
        table = bundled_table()
        assert np.array_equal(table.points, qam16.points)
        assert np.array_equal(table.labels, qam16.labels)

    def test_all_zero_label_is_a_corner(self, qam16):
        # The committed table pins 0000 to the lower-left corner point.
        corner = (-3.0 - 3.0j) / math.sqrt(10.0)
        got = map_bits(qam16, np.zeros(4, dtype=np.uint8))
        assert got == pytest.approx(corner)

    def test_sixteen_distinct_points(self, qam16):
        assert len(set(qam16.points.tolist())) == 16

    def test_unit_energy(self, qam16, qpsk):
        for const in (qam16, qpsk):
            assert np.mean(np.abs(const.points) ** 2) == pytest.approx(1.0)

    def test_qpsk_points(self, qpsk):
        want = {
            complex(a, b) / math.sqrt(2.0) for a in (-1.0, 1.0) for b in (-1.0, 1.0)
        }
        assert set(qpsk.points.tolist()) == want

    def test_gray_labels_differ_in_one_bit_between_axis_neighbours(self, qam16):
        # Sort points along each axis line and check adjacent labels.
        for fixed_im in sorted(set(qam16.points.imag.tolist())):
            on_line = [
                (p.real, tuple(lab))
                for p, lab in zip(qam16.points, qam16.labels)
                if p.imag == fixed_im
            ]
            on_line.sort()
            for (_, a), (_, b) in zip(on_line, on_line[1:]):
                assert sum(x != y for x, y in zip(a, b)) == 1

    def test_table_roundtrip(self, qam16, tmp_path):
        path = tmp_path / "c.map"
        qam16.to_table(path)
        back = Constellation.from_table(path)
        assert np.array_equal(back.points, qam16.points)
        assert np.array_equal(back.labels, qam16.labels)

    def test_rejects_non_bijective_labels(self):
        points = np.array([1.0 + 0j, -1.0 + 0j])
        labels = np.array([[0], [0]])
        with pytest.raises(ValueError):
            Constellation(points, labels)

    def test_rejects_wrong_energy(self):
        points = np.array([2.0 + 0j, -2.0 + 0j])
        labels = np.array([[0], [1]])
        with pytest.raises(ValueError):
            Constellation(points, labels)


class TestSymbolExtrinsic:
    def test_uniform_bits_give_uniform_pmf(self, qam16):
        pmf = symbol_extrinsic(qam16, np.full(4, 0.5))
        assert np.allclose(pmf, 1 / 16)

    def test_hard_bits_give_point_mass(self, qam16):
        for pattern in ([0, 0, 0, 0], [1, 0, 1, 1], [1, 1, 1, 1]):
            pmf = symbol_extrinsic(qam16, np.array(pattern, dtype=float))
            idx = int(np.argmax(pmf))
            assert pmf[idx] == pytest.approx(1.0)
            assert np.array_equal(qam16.labels[idx], pattern)

    def test_matches_product_and_normalise(self, qam16, rng):
        p1 = rng.uniform(0.05, 0.95, 4)
        got = symbol_extrinsic(qam16, p1)
        want = np.array(
            [
                np.prod([p1[b] if lab[b] else 1.0 - p1[b] for b in range(4)])
                for lab in qam16.labels
            ]
        )
        want /= want.sum()
        assert np.allclose(got, want, rtol=1e-12)

    def test_rejects_out_of_range_probabilities(self, qpsk):
        with pytest.raises(ValueError):
            symbol_extrinsic(qpsk, np.array([0.5, 1.2]))

    @given(st.lists(st.floats(0.01, 0.99), min_size=4, max_size=4))
    @settings(max_examples=30)
    def test_pmf_normalised(self, probs):
        pmf = symbol_extrinsic(qam16_gray(), np.array(probs))
        assert pmf.sum() == pytest.approx(1.0)
        assert np.all(pmf >= 0.0)


class TestBitLlrs:
    def test_point_mass_weights_give_hard_llrs(self, qam16):
        weights = np.zeros(16)
        weights[5] = 1.0
        llrs = bit_llrs_from_symbol_msg(qam16, weights)
        want = np.where(qam16.labels[5] == 1, -np.inf, np.inf)
        assert np.array_equal(llrs, want)

    def test_uniform_everything_gives_zero_llrs(self, qam16):
        llrs = bit_llrs_from_symbol_msg(qam16, np.full(16, 1 / 16))
        assert np.allclose(llrs, 0.0)

    def test_matches_exhaustive_marginalisation(self, qam16, rng):
        weights = rng.uniform(0.1, 1.0, 16)
        prior = rng.normal(0.0, 1.5, 4)
        got = bit_llrs_from_symbol_msg(qam16, weights, prior)
        p1 = expit(-prior)
        for bit in range(4):
            num = den = 0.0
            for s in range(16):
                joint = weights[s]
                for other in range(4):
                    if other != bit:
                        joint *= p1[other] if qam16.labels[s, other] else 1.0 - p1[other]
                if qam16.labels[s, bit]:
                    den += joint
                else:
                    num += joint
            assert got[bit] == pytest.approx(math.log(num) - math.log(den), rel=1e-10)

    def test_excludes_own_prior(self, qam16, rng):
        # The extrinsic for a bit must not change when its own prior does.
        weights = rng.uniform(0.1, 1.0, 16)
        base = np.array([0.4, -0.2, 1.0, 0.7])
        moved = base.copy()
        moved[2] = -3.0
        got_a = bit_llrs_from_symbol_msg(qam16, weights, base)
        got_b = bit_llrs_from_symbol_msg(qam16, weights, moved)
        assert got_a[2] == pytest.approx(got_b[2])

    def test_hard_priors_are_valid_inputs(self, qam16, rng):
        weights = rng.uniform(0.1, 1.0, 16)
        prior = np.array([np.inf, 0.0, -np.inf, 0.5])
        llrs = bit_llrs_from_symbol_msg(qam16, weights, prior)
        assert np.all(np.isfinite(llrs))

    def test_all_zero_weights_raise(self, qam16):
        with pytest.raises(AllZeroLikelihood):
            bit_llrs_from_symbol_msg(qam16, np.zeros(16))


class TestGaussianSymbolLikelihoods:
    def test_mean_field_zero_variance_equals_point_estimate(self, qam16):
        y, mu, gamma = 0.4 - 0.9j, 0.8 + 0.1j, 6.0
        got = gaussian_symbol_likelihoods(qam16, y, mu, 0.0, gamma, "mean-field")
        want = np.exp(-gamma * np.abs(y - mu * qam16.points) ** 2)
        want /= want.sum()
        assert np.allclose(got, want, rtol=1e-12)

    def test_extrinsic_zero_variance_unsquared_residual(self, qam16):
        # With no channel uncertainty the unsquared variant weights
        # symbols by exp(-gamma |y - mu s|), a first-power residual.
        y, mu, gamma = 0.3 + 0.2j, 1.1 - 0.4j, 5.0
        got = gaussian_symbol_likelihoods(
            qam16, y, mu, 0.0, gamma, "extrinsic", exponent="unsquared"
        )
        want = np.exp(-gamma * np.abs(y - mu * qam16.points))
        want /= want.sum()
        assert np.allclose(got, want, rtol=1e-12)

    def test_extrinsic_zero_variance_squared_equals_exact_likelihood(self, qam16):
        y, mu, gamma = 0.3 + 0.2j, 1.1 - 0.4j, 5.0
        got = gaussian_symbol_likelihoods(qam16, y, mu, 0.0, gamma, "extrinsic")
        want = np.exp(-gamma * np.abs(y - mu * qam16.points) ** 2)
        want /= want.sum()
        assert np.allclose(got, want, rtol=1e-12)

    def test_extrinsic_matches_channel_quadrature(self, qam16):
        # Integrate the observation factor over the channel belief on a
        # grid, symbol by symbol, and compare the normalised weights.
        y, mu, var, gamma = 0.5 - 0.3j, 0.9 + 0.2j, 0.15, 8.0
        h_grid, cell = _channel_grid(mu, var)
        q = np.exp(-np.abs(h_grid - mu) ** 2 / var) / (math.pi * var)
        want = np.array(
            [
                float(
                    np.sum(q * gamma / math.pi * np.exp(-gamma * np.abs(y - h_grid * s) ** 2))
                )
                * cell
                for s in qam16.points
            ]
        )
        want /= want.sum()
        got = gaussian_symbol_likelihoods(qam16, y, mu, var, gamma, "extrinsic")
        assert np.allclose(got, want, rtol=1e-6)

    def test_mean_field_matches_expected_log_factor_quadrature(self, qam16):
        # exp of the grid expectation of the log factor under the belief.
        y, mu, var, gamma = -0.2 + 0.6j, 0.7 - 0.5j, 0.2, 4.0
        h_grid, cell = _channel_grid(mu, var)
        q = np.exp(-np.abs(h_grid - mu) ** 2 / var) / (math.pi * var)
        want = np.array(
            [
                math.exp(
                    float(np.sum(q * (-gamma) * np.abs(y - h_grid * s) ** 2)) * cell
                )
                for s in qam16.points
            ]
        )
        want /= want.sum()
        got = gaussian_symbol_likelihoods(qam16, y, mu, var, gamma, "mean-field")
        assert np.allclose(got, want, rtol=1e-6)

    def test_batch_equals_scalar(self, qam16, rng):
        n = 5
        y = rng.normal(size=n) + 1j * rng.normal(size=n)
        mu = rng.normal(size=n) + 1j * rng.normal(size=n)
        var = rng.uniform(0.01, 0.5, n)
        batch = batch_gaussian_symbol_loglik(qam16, y, mu, var, 7.0, "extrinsic")
        for i in range(n):
            single = gaussian_symbol_likelihoods(qam16, y[i], mu[i], var[i], 7.0, "extrinsic")
            row = np.exp(batch[i] - batch[i].max())
            assert np.allclose(row / row.sum(), single, rtol=1e-12)

    def test_unknown_variant_rejected(self, qam16):
        with pytest.raises(ValueError):
            gaussian_symbol_likelihoods(qam16, 0j, 0j, 0.0, 1.0, "posterior")


def test_map_bits_frame_shape(qam16, rng):
    bits = rng.integers(0, 2, (20, 4)).astype(np.uint8)
    symbols = map_bits(qam16, bits)
    assert symbols.shape == (20,)
    for row, s in zip(bits, symbols):
        assert map_bits(qam16, row) == s
