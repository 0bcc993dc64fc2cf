"""Algebra of circularly symmetric complex Gaussian messages.

Scalar messages are stored in precision form (mean, precision). Precision
zero encodes the improper flat message, precision ``inf`` a point mass, so
products and divisions reduce to arithmetic on natural parameters without
special-casing infinite variances:

    product:  precision_c = precision_a + precision_b
              precision_c * mean_c = precision_a * mean_a + precision_b * mean_b
    division: same with a minus sign.

Joint (vector) densities carry a dense covariance and, when available, a
low-rank factor ``A`` with ``cov = A @ A.conj().T``. The factor turns the
posterior under independent scalar observations into a small information
filter in factor space: with observation precisions ``lam``,

    J = I_r + A^H diag(lam) A          (r x r, always well conditioned)

so smoothing an n-point prior of rank r costs O(n r^2) instead of O(n^3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import NonpositivePrecision, SingularMatrix

# Relative reciprocal-condition threshold below which solves are refused.
RCOND_FLOOR = 1e-12
# Relative eigenvalue cutoff when factoring a covariance numerically.
_FACTOR_CUTOFF = 1e-14


@dataclass(frozen=True)
class ScalarGaussian:
    """One complex Gaussian message in precision form.

    Parameters
    ----------
    mean : complex
        Location. Must be finite whenever ``precision > 0``; a flat
        message is normalised to mean 0.
    precision : float
        Inverse variance, in ``[0, inf]``. Zero encodes the flat message,
        ``inf`` a point mass at ``mean``.
    """

    mean: complex
    precision: float

    def __post_init__(self):
        mean = complex(self.mean)
        precision = float(self.precision)
        if math.isnan(precision) or precision < 0.0:
            raise ValueError(f"precision must be in [0, inf], got {precision}")
        if precision == 0.0:
            mean = 0.0 + 0.0j
        elif not (math.isfinite(mean.real) and math.isfinite(mean.imag)):
            raise ValueError(f"mean must be finite for precision {precision}, got {mean}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", precision)

    @classmethod
    def flat(cls) -> "ScalarGaussian":
        """The improper uniform message."""
        return cls(0.0, 0.0)

    @classmethod
    def from_moments(cls, mean: complex, variance: float) -> "ScalarGaussian":
        """Build from (mean, variance); ``variance = inf`` gives the flat message."""
        variance = float(variance)
        if math.isnan(variance) or variance < 0.0:
            raise ValueError(f"variance must be in [0, inf], got {variance}")
        if variance == 0.0:
            return cls(mean, math.inf)
        return cls(mean, 1.0 / variance)

    @property
    def variance(self) -> float:
        """Inverse precision; ``inf`` for the flat message."""
        if self.precision == 0.0:
            return math.inf
        if math.isinf(self.precision):
            return 0.0
        return 1.0 / self.precision

    @property
    def is_flat(self) -> bool:
        return self.precision == 0.0


def product(a: ScalarGaussian, b: ScalarGaussian) -> ScalarGaussian:
    """Pointwise product of two scalar messages, renormalised.

    Natural parameters add. A point-mass operand dominates; two point
    masses must agree on the mean.
    """
    if math.isinf(a.precision) or math.isinf(b.precision):
        if math.isinf(a.precision) and math.isinf(b.precision) and a.mean != b.mean:
            raise ValueError("product of point masses at different means")
        return ScalarGaussian(a.mean if math.isinf(a.precision) else b.mean, math.inf)
    precision = a.precision + b.precision
    if precision == 0.0:
        return ScalarGaussian.flat()
    mean = (a.precision * a.mean + b.precision * b.mean) / precision
    return ScalarGaussian(mean, precision)


def divide(num: ScalarGaussian, den: ScalarGaussian) -> ScalarGaussian:
    """Density division ``num / den``, the inverse of :func:`product`.

    Equal precisions yield the flat message. A denominator precision
    strictly above the numerator's would produce a negative-precision
    "message", which is not representable.

    Raises
    ------
    NonpositivePrecision
        If ``den.precision > num.precision``.
    """
    if math.isinf(num.precision):
        if math.isinf(den.precision):
            raise NonpositivePrecision("cannot divide a point mass by a point mass")
        return ScalarGaussian(num.mean, math.inf)
    if den.precision > num.precision:
        raise NonpositivePrecision(
            f"division precision {num.precision - den.precision:.3e} < 0"
        )
    precision = num.precision - den.precision
    if precision == 0.0:
        return ScalarGaussian.flat()
    mean = (num.precision * num.mean - den.precision * den.mean) / precision
    return ScalarGaussian(mean, precision)


@dataclass(frozen=True)
class GaussianMixture:
    """Finite mixture of proper scalar Gaussians with normalised weights."""

    weights: np.ndarray
    components: tuple[ScalarGaussian, ...]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        components = tuple(self.components)
        if weights.ndim != 1 or len(components) != weights.size or weights.size == 0:
            raise ValueError("need one weight per component, at least one component")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-12")
        for comp in components:
            if comp.precision == 0.0:
                raise ValueError("mixture components must be proper (precision > 0)")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)


def mixture_moments(mix: GaussianMixture) -> ScalarGaussian:
    """Moment-match a mixture by a single Gaussian.

    The matched mean is the weighted mean; the variance is the weighted
    second moment minus the squared mean, floored at zero against
    cancellation when all components coincide.
    """
    means = np.array([c.mean for c in mix.components])
    variances = np.array([c.variance for c in mix.components])
    mean = np.dot(mix.weights, means)
    second = np.dot(mix.weights, np.abs(means) ** 2 + variances)
    variance = max(float(second - abs(mean) ** 2), 0.0)
    return ScalarGaussian.from_moments(mean, variance)


def _hermitize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.conj().T)


@dataclass(frozen=True)
class JointGaussian:
    """Proper joint complex Gaussian over n correlated scalars.

    Parameters
    ----------
    mean : (n,) complex vector
    cov : (n, n) complex matrix
        Must be Hermitian to within 1e-12 relative and positive
        semidefinite to within ``-1e-10 * largest eigenvalue``.
    factor : (n, r) complex matrix, optional
        Exact low-rank factor with ``cov = factor @ factor.conj().T``.
        When omitted, a factor is computed lazily from the eigendecomposition
        the first time it is needed.
    """

    mean: np.ndarray
    cov: np.ndarray
    factor: np.ndarray | None = None

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean, dtype=np.complex128)
        cov = np.ascontiguousarray(self.cov, dtype=np.complex128)
        n = mean.size
        if mean.ndim != 1 or cov.shape != (n, n):
            raise ValueError(f"shape mismatch: mean {mean.shape}, cov {cov.shape}")
        if not np.all(np.isfinite(mean.view(np.float64))):
            raise ValueError("mean must be finite")
        scale = max(float(np.abs(cov).max()), 1.0) if n else 1.0
        if n and float(np.abs(cov - cov.conj().T).max()) > 1e-12 * scale:
            raise ValueError("covariance is not Hermitian within 1e-12 relative")
        if n:
            eigs = np.linalg.eigvalsh(_hermitize(cov))
            if eigs[0] < -1e-10 * max(float(eigs[-1]), 0.0):
                raise ValueError(f"covariance has eigenvalue {eigs[0]:.3e} below tolerance")
        factor = self.factor
        if factor is not None:
            factor = np.ascontiguousarray(factor, dtype=np.complex128)
            if factor.ndim != 2 or factor.shape[0] != n:
                raise ValueError(f"factor shape {factor.shape} does not match n={n}")
            if float(np.abs(factor @ factor.conj().T - cov).max()) > 1e-8 * scale:
                raise ValueError("factor does not reproduce the covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "factor", factor)

    @property
    def dim(self) -> int:
        return self.mean.size

    def factor_matrix(self) -> np.ndarray:
        """An exact-rank factor ``A`` with ``cov = A A^H``.

        Uses the stored analytic factor when one was supplied; otherwise
        factors the covariance once via the eigendecomposition, keeping
        eigenvalues above ``1e-14`` of the largest, and caches the result.
        """
        if self.factor is not None:
            return self.factor
        w, u = np.linalg.eigh(_hermitize(self.cov))
        keep = w > _FACTOR_CUTOFF * max(float(w[-1]), 0.0)
        a = np.ascontiguousarray(u[:, keep] * np.sqrt(w[keep]))
        object.__setattr__(self, "factor", a)
        return a

    def marginal(self, i: int) -> ScalarGaussian:
        """Marginal of component ``i``."""
        return ScalarGaussian.from_moments(
            self.mean[i], max(float(self.cov[i, i].real), 0.0)
        )

    def draw(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Sample via the factor: ``h = mean + A xi`` with ``xi ~ CN(0, I)``."""
        a = self.factor_matrix()
        r = a.shape[1]
        shape = (r,) if size is None else (size, r)
        xi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        return self.mean + xi @ a.T if size is not None else self.mean + a @ xi


def _check_obs(prior: JointGaussian, obs_means: np.ndarray, obs_variances: np.ndarray):
    obs_means = np.asarray(obs_means, dtype=np.complex128)
    obs_variances = np.asarray(obs_variances, dtype=np.float64)
    n = prior.dim
    if obs_means.shape != (n,) or obs_variances.shape != (n,):
        raise ValueError("observation vectors must match the prior dimension")
    if np.any(obs_variances <= 0.0) or np.any(np.isnan(obs_variances)):
        raise ValueError("observation variances must be positive (inf allowed)")
    if not np.all(np.isfinite(obs_means[np.isfinite(obs_variances)].view(np.float64))):
        raise ValueError("observation means must be finite where the variance is finite")
    return obs_means, obs_variances


def _rcond_check(mat: np.ndarray, what: str):
    eigs = np.linalg.eigvalsh(_hermitize(mat))
    if eigs[0] <= 0.0 or eigs[0] < RCOND_FLOOR * eigs[-1]:
        raise SingularMatrix(
            f"{what} has reciprocal condition below {RCOND_FLOOR:g} "
            f"(eigenvalue range [{eigs[0]:.3e}, {eigs[-1]:.3e}])"
        )


def extrinsic_conditional(
    prior: JointGaussian,
    obs_means: Sequence[complex],
    obs_variances: Sequence[float],
    i: int,
) -> ScalarGaussian:
    """Extrinsic marginal at index ``i``: condition the prior on every
    observation except the i-th and read off component ``i``.

    Observations are independent scalar Gaussians ``obs_j ~ CN(h_j, var_j)``;
    an infinite variance drops the observation. Implemented by the direct
    Schur complement on the deleted-index subsystem, independently of the
    factor-space route in :func:`joint_extrinsics`.

    Raises
    ------
    SingularMatrix
        If the conditioning system ``cov[F, F] + diag(var[F])`` is
        numerically singular (reciprocal condition below 1e-12).
    """
    obs_means, obs_variances = _check_obs(prior, obs_means, obs_variances)
    n = prior.dim
    if not 0 <= i < n:
        raise IndexError(f"index {i} out of range for dimension {n}")
    keep = np.flatnonzero(np.isfinite(obs_variances))
    keep = keep[keep != i]
    if keep.size == 0:
        return prior.marginal(i)
    g = prior.cov[np.ix_(keep, keep)] + np.diag(obs_variances[keep])
    _rcond_check(g, "conditioning matrix")
    cho = scipy.linalg.cho_factor(g, lower=True)
    k = prior.cov[i, keep]
    innov = obs_means[keep] - prior.mean[keep]
    mean = prior.mean[i] + k @ scipy.linalg.cho_solve(cho, innov)
    var = float(prior.cov[i, i].real - (k @ scipy.linalg.cho_solve(cho, k.conj())).real)
    return ScalarGaussian.from_moments(mean, max(var, 0.0))


def smooth_factored(
    factor: np.ndarray,
    prior_mean: np.ndarray,
    obs_means: np.ndarray,
    obs_precisions: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Posterior and extrinsic marginals under independent scalar observations.

    Array core shared by :func:`joint_extrinsics` and the receiver. Works
    in factor space: with ``A`` of shape (n, r) and observation precisions
    ``lam`` (zero entries drop the observation),

        J = I + A^H diag(lam) A,    g = J^{-1} A^H (lam * (obs - mean))

    gives posterior means ``mean + A g`` and variances ``diag(A J^{-1} A^H)``.
    Extrinsic messages divide the i-th observation back out of the i-th
    posterior marginal, which is exact because observation i acts on
    component i alone.

    Returns
    -------
    (post_mean, post_var, ext_mean, ext_precision) arrays of length n.
    An extrinsic precision of 0 marks a flat extrinsic.
    """
    a = factor
    n, r = a.shape
    lam = np.asarray(obs_precisions, dtype=np.float64)
    active = lam > 0.0
    obs_eff = np.where(active, np.asarray(obs_means, dtype=np.complex128), 0.0)
    d = np.where(active, obs_eff - prior_mean, 0.0)
    ah = a.conj().T
    j = np.eye(r, dtype=np.complex128) + (ah * lam) @ a
    _rcond_check(j, "factor-space information matrix")
    low = np.linalg.cholesky(j)
    # post_var[i] = || L^{-1} a_i ||^2, post_mean = mean + A J^{-1} A^H (lam d)
    x = scipy.linalg.solve_triangular(low, ah, lower=True)
    post_var = np.maximum(np.sum(x.real**2 + x.imag**2, axis=0), 0.0)
    g = scipy.linalg.cho_solve((low, True), ah @ (lam * d))
    post_mean = prior_mean + a @ g
    # Divide observation i out of posterior marginal i, in natural parameters.
    zero_var = post_var == 0.0
    post_prec = np.empty(n)
    post_prec[~zero_var] = 1.0 / post_var[~zero_var]
    post_prec[zero_var] = np.inf
    ext_prec = np.where(zero_var, np.inf, np.maximum(post_prec - lam, 0.0))
    ext_mean = np.zeros(n, dtype=np.complex128)
    reg = ~zero_var & (ext_prec > 0.0)
    ext_mean[reg] = (post_mean[reg] * post_prec[reg] - lam[reg] * obs_eff[reg]) / ext_prec[reg]
    ext_mean[zero_var] = post_mean[zero_var]
    return post_mean, post_var, ext_mean, ext_prec


def joint_extrinsics(
    prior: JointGaussian,
    obs_means: Sequence[complex],
    obs_variances: Sequence[float],
) -> list[ScalarGaussian]:
    """All n extrinsic marginals in one factor-space solve.

    Equivalent to calling :func:`extrinsic_conditional` at every index, at
    O(n r^2) instead of n separate O(n^3) solves: the joint posterior under
    all observations is formed once, and the i-th observation is divided
    back out of the i-th posterior marginal.

    Raises
    ------
    SingularMatrix
        If the factor-space information matrix is numerically singular.
    """
    obs_means, obs_variances = _check_obs(prior, obs_means, obs_variances)
    lam = np.zeros(prior.dim)
    finite = np.isfinite(obs_variances)
    lam[finite] = 1.0 / obs_variances[finite]
    _, _, ext_mean, ext_prec = smooth_factored(
        prior.factor_matrix(), prior.mean, obs_means, lam
    )
    return [ScalarGaussian(m, p) for m, p in zip(ext_mean, ext_prec)]
