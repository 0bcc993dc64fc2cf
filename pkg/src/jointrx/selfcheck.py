"""Independent oracles and the built-in self test.

Every closed-form message update in the package has a brute-force
counterpart here that shares no code with it: two-dimensional grid
quadrature over the complex plane for moment computations, full matrix
inversion in information form for the Gaussian smoothing, and exhaustive
enumeration of information words for the decoder. The test suite and the
``jointrx selftest`` command both run these comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coding import CodeConfig, encode
from .gaussians import JointGaussian, ScalarGaussian


def quad_moments(
    log_density: Callable[[np.ndarray], np.ndarray],
    center: complex,
    half_width: float,
    n_points: int = 401,
) -> tuple[complex, float]:
    """Mean and variance of an unnormalised density on a complex grid.

    Integrates on a ``(2 half_width)^2`` square around ``center`` with
    ``n_points`` samples per axis. The caller chooses the window wide
    enough to capture the mass (8 posterior standard deviations in the
    suites below); the cell area cancels in the normalised moments.
    """
    re = np.linspace(center.real - half_width, center.real + half_width, n_points)
    im = np.linspace(center.imag - half_width, center.imag + half_width, n_points)
    grid = re[:, None] + 1j * im[None, :]
    logd = log_density(grid)
    logd = logd - logd.max()
    weight = np.exp(logd)
    total = weight.sum()
    mean = complex((weight * grid).sum() / total)
    second = float((weight * (np.abs(grid) ** 2)).sum() / total)
    return mean, max(second - abs(mean) ** 2, 0.0)


def scalar_log_density(msg: ScalarGaussian) -> Callable[[np.ndarray], np.ndarray]:
    """Log density of a proper scalar Gaussian message, up to a constant."""
    return lambda grid: -msg.precision * np.abs(grid - msg.mean) ** 2


def product_oracle(a: ScalarGaussian, b: ScalarGaussian) -> tuple[complex, float]:
    """Moments of the product density by quadrature."""
    prec = a.precision + b.precision
    center = (a.precision * a.mean + b.precision * b.mean) / prec
    width = 8.0 / np.sqrt(prec)
    da, db = scalar_log_density(a), scalar_log_density(b)
    return quad_moments(lambda g: da(g) + db(g), complex(center), width)


def mixture_oracle(weights: np.ndarray, components: list[ScalarGaussian]) -> tuple[complex, float]:
    """Moments of a Gaussian mixture by per-component quadrature.

    A single grid cannot resolve a narrow component sitting far from a
    wide one, so each component is integrated on its own grid (sized to
    its own standard deviation) and the pieces are combined by linearity
    of the integral. Only the component moments come from quadrature;
    the combination is forced by the definition of a mixture.
    """
    mix_mean = 0.0j
    mix_second = 0.0
    for w, comp in zip(weights, components):
        if w <= 0.0:
            continue
        mean, var = quad_moments(
            scalar_log_density(comp), comp.mean, 8.0 * float(np.sqrt(comp.variance))
        )
        mix_mean += w * mean
        mix_second += w * (var + abs(mean) ** 2)
    return complex(mix_mean), float(mix_second - abs(mix_mean) ** 2)


def dense_extrinsic_oracle(
    prior: JointGaussian,
    obs_means: np.ndarray,
    obs_variances: np.ndarray,
    i: int,
) -> tuple[complex, float]:
    """Extrinsic marginal at ``i`` by full information-form inversion.

    Inverts the prior covariance, adds every observation precision except
    the i-th on the diagonal, inverts back, and reads off marginal ``i``.
    Complementary to both production routes (neither inverts anything
    n x n).
    """
    n = prior.dim
    info = np.linalg.inv(prior.cov)
    lam = np.zeros(n)
    finite = np.isfinite(obs_variances)
    lam[finite] = 1.0 / obs_variances[finite]
    lam[i] = 0.0
    posterior_cov = np.linalg.inv(info + np.diag(lam))
    rhs = info @ prior.mean + lam * np.where(finite, obs_means, 0.0)
    mean = (posterior_cov @ rhs)[i]
    return complex(mean), float(posterior_cov[i, i].real)


def enumeration_decoder_oracle(
    cfg: CodeConfig, prior_llrs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exact bitwise posteriors by enumerating all information words.

    Feasible for short blocks (2**info_length codewords). Returns the
    probability of zero for every coded bit and every information bit.
    """
    n_words = 1 << cfg.info_length
    words = (np.arange(n_words)[:, None] >> np.arange(cfg.info_length - 1, -1, -1)) & 1
    codewords = np.empty((n_words, cfg.coded_length), dtype=np.uint8)
    for w in range(n_words):
        codewords[w] = encode(cfg, words[w].astype(np.uint8))
    llrs = np.asarray(prior_llrs, dtype=np.float64)
    lp0 = -np.logaddexp(0.0, -llrs)
    lp1 = -np.logaddexp(0.0, llrs)
    word_loglik = np.where(codewords == 1, lp1[None, :], lp0[None, :]).sum(axis=1)
    word_loglik -= word_loglik.max()
    post = np.exp(word_loglik)
    post /= post.sum()
    p0_coded = post @ (codewords == 0)
    p0_info = post @ (words == 0)
    return p0_coded, p0_info


def mf_obs_oracle(
    y: complex, pmf: np.ndarray, points: np.ndarray, noise_precision: float
) -> tuple[complex, float]:
    """Moments of ``exp(E_s[log CN(y; h s, 1/gamma)])`` by quadrature.

    The expectation over the symbol pmf is evaluated literally, point by
    grid point, without completing the square.
    """

    def logd(grid):
        acc = np.zeros_like(grid, dtype=np.float64)
        for w, s in zip(pmf, points):
            if w > 0.0:
                acc += w * (-noise_precision * np.abs(y - grid * s) ** 2)
        return acc

    scale = float(np.dot(pmf, np.abs(points) ** 2))
    width = 8.0 / np.sqrt(noise_precision * scale)
    center = y * complex(np.dot(pmf, points)).conjugate() / scale
    return quad_moments(logd, center, width)


def symbol_averaged_likelihood_oracle(
    y: complex, pmf: np.ndarray, points: np.ndarray, noise_precision: float
) -> tuple[complex, float]:
    """Moments of ``sum_s pmf(s) exp(-gamma |y - h s|^2)`` by quadrature."""

    def logd(grid):
        stack = np.stack(
            [
                np.log(w) - noise_precision * np.abs(y - grid * s) ** 2
                for w, s in zip(pmf, points)
                if w > 0.0
            ]
        )
        peak = stack.max(axis=0)
        return peak + np.log(np.exp(stack - peak).sum(axis=0))

    active = pmf > 0.0
    abs2 = np.abs(points[active]) ** 2
    centers = y * points[active].conjugate() / abs2
    center = complex(np.dot(pmf[active] / abs2, centers) / np.dot(pmf[active], 1.0 / abs2))
    width = float(np.abs(centers - center).max() + 8.0 / np.sqrt(noise_precision * abs2.min()))
    return quad_moments(logd, center, width)


def tilted_site_oracle(
    y: complex,
    pmf: np.ndarray,
    cavity: ScalarGaussian,
    points: np.ndarray,
    noise_precision: float,
) -> tuple[complex, float]:
    """Moments of cavity times symbol-averaged likelihood by quadrature."""
    cav = scalar_log_density(cavity)

    def logd(grid):
        stack = np.stack(
            [
                np.log(w) - noise_precision * np.abs(y - grid * s) ** 2
                for w, s in zip(pmf, points)
                if w > 0.0
            ]
        )
        peak = stack.max(axis=0)
        return cav(grid) + peak + np.log(np.exp(stack - peak).sum(axis=0))

    width = float(np.abs(y) + 8.0 * np.sqrt(cavity.variance) + 8.0 / np.sqrt(noise_precision))
    return quad_moments(logd, cavity.mean, width, n_points=601)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _rel_err(got: complex | float, want: complex | float) -> float:
    return abs(got - want) / max(abs(want), 1e-30)


def _random_proper(rng: np.random.Generator, max_prec: float = 50.0) -> ScalarGaussian:
    mean = complex(rng.normal(), rng.normal())
    return ScalarGaussian(mean, float(rng.uniform(0.05, max_prec)))


def gaussian_algebra_suite(n_instances: int = 1000, tol: float = 1e-8, seed: int = 2024) -> SuiteResult:
    """Randomised product/division/mixture/extrinsic checks against oracles.

    Splits ``n_instances`` across the four operations: products and
    mixture moments against grid quadrature, division as the exact
    inverse of the product, extrinsic conditionals against the dense
    information-form oracle.
    """
    from .gaussians import (
        GaussianMixture,
        divide,
        extrinsic_conditional,
        mixture_moments,
        product,
    )

    rng = np.random.default_rng(seed)
    n_prod = n_instances * 35 // 100
    n_div = n_instances * 25 // 100
    n_mix = n_instances * 20 // 100
    n_ext = n_instances - n_prod - n_div - n_mix
    worst = 0.0
    checked = 0

    for _ in range(n_prod):
        a, b = _random_proper(rng), _random_proper(rng)
        got = product(a, b)
        mean, var = product_oracle(a, b)
        worst = max(worst, _rel_err(got.mean, mean), _rel_err(got.variance, var))
        checked += 1
    for _ in range(n_div):
        # Division is checked as the exact inverse of the product.
        den = _random_proper(rng)
        extra = _random_proper(rng)
        got = divide(product(den, extra), den)
        worst = max(worst, _rel_err(got.mean, extra.mean), _rel_err(got.precision, extra.precision))
        checked += 1
    for _ in range(n_mix):
        k = int(rng.integers(2, 6))
        comps = [_random_proper(rng) for _ in range(k)]
        weights = rng.dirichlet(np.ones(k))
        got = mixture_moments(GaussianMixture(weights, tuple(comps)))
        mean, var = mixture_oracle(weights, comps)
        worst = max(worst, _rel_err(got.mean, mean), _rel_err(got.variance, var))
        checked += 1
    for _ in range(n_ext):
        n = int(rng.integers(3, 9))
        prior = _random_joint(rng, n)
        obs_means = rng.normal(size=n) + 1j * rng.normal(size=n)
        obs_vars = rng.uniform(0.05, 5.0, size=n)
        obs_vars[rng.random(n) < 0.2] = np.inf
        i = int(rng.integers(0, n))
        got = extrinsic_conditional(prior, obs_means, obs_vars, i)
        mean, var = dense_extrinsic_oracle(prior, obs_means, obs_vars, i)
        worst = max(worst, _rel_err(got.mean, mean), _rel_err(got.variance, var))
        checked += 1

    passed = worst <= tol
    return SuiteResult(
        "gaussian-algebra",
        passed,
        f"{checked} instances, max relative error {worst:.3e} (tolerance {tol:g})",
    )


def _random_joint(rng: np.random.Generator, n: int) -> JointGaussian:
    """A well-conditioned random proper joint Gaussian."""
    root = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    cov = root @ root.conj().T / n + 0.1 * np.eye(n)
    cov = 0.5 * (cov + cov.conj().T)
    mean = rng.normal(size=n) + 1j * rng.normal(size=n)
    return JointGaussian(mean, cov)


def joint_extrinsics_suite(n_instances: int = 100, dim: int = 8, tol: float = 1e-8, seed: int = 7) -> SuiteResult:
    """Factor-space joint extrinsics against per-index Schur conditioning."""
    from .gaussians import extrinsic_conditional, joint_extrinsics

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        prior = _random_joint(rng, dim)
        obs_means = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        obs_vars = rng.uniform(0.05, 5.0, size=dim)
        obs_vars[rng.random(dim) < 0.15] = np.inf
        joint = joint_extrinsics(prior, obs_means, obs_vars)
        for i in range(dim):
            single = extrinsic_conditional(prior, obs_means, obs_vars, i)
            worst = max(
                worst,
                _rel_err(joint[i].mean, single.mean),
                _rel_err(joint[i].variance, single.variance),
            )
    passed = worst <= tol
    return SuiteResult(
        "joint-extrinsics",
        passed,
        f"{n_instances} instances of dimension {dim}, max relative error {worst:.3e}",
    )


def decoder_suite(n_trials: int = 100, info_length: int = 8, tol: float = 1e-10, seed: int = 11) -> SuiteResult:
    """Forward-backward decoder against exhaustive enumeration, in probabilities."""
    from scipy.special import expit

    from .coding import decode_siso

    rng = np.random.default_rng(seed)
    cfg = CodeConfig((0o133, 0o171, 0o165), 7, info_length)
    worst = 0.0
    for _ in range(n_trials):
        llrs = rng.normal(0.0, 2.0, cfg.coded_length)
        app_coded, app_info = decode_siso(cfg, llrs)
        p0_coded, p0_info = enumeration_decoder_oracle(cfg, llrs)
        worst = max(
            worst,
            float(np.max(np.abs(expit(app_coded) - p0_coded))),
            float(np.max(np.abs(expit(app_info) - p0_info))),
        )
    passed = worst <= tol
    return SuiteResult(
        "decoder-exact",
        passed,
        f"{n_trials} random blocks of {info_length} bits, max probability error {worst:.3e}",
    )


def qpsk_suite(frames: int = 40, seed: int = 5) -> SuiteResult:
    """Uncoded QPSK on a known flat channel against the analytic error rate."""
    from .simulate import RunConfig, qpsk_ber_analytic, run_experiment, snr_db_to_noise_precision

    cfg = RunConfig(
        snr_db=(0.0, 4.0, 8.0),
        mode="uncoded-qpsk",
        master_seed=seed,
        max_frames=frames,
        target_errors=10**9,
        n_total=300,
    )
    records = run_experiment(cfg, workers=1)
    worst = 0.0
    for rec in records:
        expected = qpsk_ber_analytic(snr_db_to_noise_precision(rec.snr_db))
        n_bits = rec.frames * 600
        sigma = np.sqrt(expected * (1.0 - expected) / n_bits)
        worst = max(worst, abs(rec.ber - expected) / sigma)
    passed = worst <= 3.0
    return SuiteResult(
        "uncoded-qpsk",
        passed,
        f"{frames} frames per point, worst deviation {worst:.2f} sigma (limit 3)",
    )


def run_selftest(fast: bool = False) -> list[SuiteResult]:
    """Run every oracle suite; ``fast`` shrinks the instance counts."""
    scale = 10 if fast else 1
    return [
        gaussian_algebra_suite(n_instances=1000 // scale),
        joint_extrinsics_suite(n_instances=100 // scale),
        decoder_suite(n_trials=100 // scale),
        qpsk_suite(frames=40 // scale),
    ]
