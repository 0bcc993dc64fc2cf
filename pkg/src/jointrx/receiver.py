"""Iterative receivers for joint channel estimation and decoding.

All receivers run on the pointwise model ``y = h * x + w`` with known
noise precision and a correlated Gaussian prior on the channel vector.
They share one skeleton per iteration:

1. refresh the per-position channel observation messages (pilots always;
   data positions from the decoder feedback, from iteration 2 on),
2. smooth against the channel prior, producing extrinsic channel
   messages and the channel belief,
3. score the data symbols under the Gaussian channel knowledge, demap to
   extrinsic bit LLRs, run the soft decoder, and feed its extrinsic
   output back.

The algorithms differ only in how step 1 summarises the decoder feedback
into a Gaussian and in which channel moments step 3 uses:

- "bp-ga": moment-matched Gaussian of the exact symbol-averaged mixture;
  detection from the extrinsic channel moments.
- "ep": ordered per-site expectation propagation with damped natural
  parameters and a skip-on-negative-precision policy; detection from the
  extrinsic channel moments.
- "bp-mf": mean-field observation messages built from symbol posterior
  moments; detection from the channel belief (mean and variance).
- "bp-em": "bp-mf" with the channel belief collapsed to its mean, which
  turns the variational update into an expectation-maximisation step.
- "perfect-csi": genie reference; the belief is a point mass at the true
  channel and estimation is skipped.

The first iteration has no decoder feedback, so every algorithm starts
from the identical pilot-only smoothing pass.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .channel import FrameLayout
from .coding import decode_siso, deinterleave, extrinsic_llrs, hard_decide, interleave
from .errors import BothFlat, DegenerateSymbolBelief, ZeroModulusSymbol
from .gaussians import GaussianMixture, JointGaussian, ScalarGaussian, mixture_moments, product, smooth_factored
from .mapping import (
    Constellation,
    batch_bit_llrs,
    batch_gaussian_symbol_loglik,
    batch_symbol_pmf,
)

ALGORITHMS = ("bp-ga", "ep", "bp-mf", "bp-em", "perfect-csi")


@dataclass(frozen=True)
class ReceiverConfig:
    """Algorithm selection and iteration parameters.

    ``ep_step`` damps the EP belief update on natural parameters (1 means
    undamped); ``symbol_exponent`` selects the residual power in the
    extrinsic symbol likelihood ("squared" unless deliberately matching
    the unsquared variant).
    """

    algorithm: str
    noise_precision: float
    iterations: int = 15
    ep_step: float = 0.5
    ep_policy: str = "skip-update"
    symbol_exponent: str = "squared"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.noise_precision > 0.0:
            raise ValueError("noise precision must be positive")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if not 0.0 < self.ep_step <= 1.0:
            raise ValueError("ep_step must lie in (0, 1]")
        if self.ep_policy != "skip-update":
            raise ValueError(f"unsupported ep_policy {self.ep_policy!r}")
        if self.symbol_exponent not in ("squared", "unsquared"):
            raise ValueError("symbol_exponent must be 'squared' or 'unsquared'")


@dataclass
class ReceiverState:
    """Mutable per-frame message state.

    Channel messages are kept as parallel arrays over the frame: the
    observation messages (one per position), the extrinsic messages from
    the smoother, and their product, the belief. ``beta`` holds the
    decoder's extrinsic symbol pmfs, ``llr_feedback`` its extrinsic LLRs
    in interleaved slot order (filler slots pinned to +inf).
    """

    obs_mean: np.ndarray
    obs_prec: np.ndarray
    ext_mean: np.ndarray
    ext_prec: np.ndarray
    belief_mean: np.ndarray
    belief_prec: np.ndarray
    llr_feedback: np.ndarray
    beta: np.ndarray | None = None
    iteration: int = 0

    def validate(self):
        n = self.obs_mean.size
        for name in ("obs_prec", "ext_mean", "ext_prec", "belief_mean", "belief_prec"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} does not match frame length {n}")
        for name in ("obs_prec", "ext_prec", "belief_prec"):
            arr = getattr(self, name)
            if np.any(np.isnan(arr)) or np.any(arr < 0.0):
                raise ValueError(f"{name} must be nonnegative")
        for name in ("obs_mean", "ext_mean", "belief_mean"):
            if not np.all(np.isfinite(getattr(self, name).view(np.float64))):
                raise ValueError(f"{name} must be finite")
        if self.beta is not None:
            rows = self.beta.sum(axis=1)
            if np.any(self.beta < 0.0) or np.any(np.abs(rows - 1.0) > 1e-9):
                raise ValueError("beta rows must be pmfs")


@dataclass(frozen=True)
class IterationDiagnostic:
    """Per-iteration trace record; counts are None when truth is unknown."""

    iteration: int
    channel_mse: float | None
    coded_bit_errors: int | None
    info_bit_errors: int | None
    ep_skipped: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def pilot_obs_message(y: complex, x: complex, noise_precision: float) -> ScalarGaussian:
    """Channel observation from a known symbol: ``CN(y conj(x) / |x|^2, 1 / (gamma |x|^2))``.

    Raises
    ------
    ZeroModulusSymbol
        If ``x`` is zero; a zero symbol shows nothing of the channel.
    """
    energy = abs(x) ** 2
    if energy == 0.0:
        raise ZeroModulusSymbol("known symbol has zero modulus")
    return ScalarGaussian(y * x.conjugate() / energy, noise_precision * energy)


def ga_channel_obs_message(
    y: complex,
    pmf: np.ndarray,
    constellation: Constellation,
    noise_precision: float,
) -> ScalarGaussian:
    """Moment-matched Gaussian of the symbol-averaged channel likelihood.

    Averaging the observation factor over the symbol pmf gives, as a
    density in the channel coefficient, a mixture with one component per
    symbol: mean ``y conj(s) / |s|^2``, variance ``1 / (gamma |s|^2)``,
    and weight proportional to ``pmf(s) / |s|^2``. The mixture is matched
    by mean and variance via the Gaussian algebra.

    Raises
    ------
    ZeroModulusSymbol
        If the alphabet contains a zero-modulus point.
    """
    points = constellation.points
    energy = np.abs(points) ** 2
    if np.any(energy == 0.0):
        raise ZeroModulusSymbol("alphabet contains a zero-modulus point")
    pmf = np.asarray(pmf, dtype=np.float64)
    weights = pmf / energy
    weights = weights / weights.sum()
    components = tuple(
        ScalarGaussian(y * s.conjugate() / e, noise_precision * e)
        for s, e in zip(points, energy)
    )
    return mixture_moments(GaussianMixture(weights, components))


def mf_channel_obs_message(
    y: complex, sym_mean: complex, sym_var: float, noise_precision: float
) -> ScalarGaussian:
    """Mean-field channel observation from symbol belief moments.

    The expected log observation factor under a symbol belief with mean
    ``mu`` and variance ``v`` is a Gaussian in the channel coefficient
    with mean ``y conj(mu) / (v + |mu|^2)`` and precision
    ``gamma (v + |mu|^2)``.

    Raises
    ------
    DegenerateSymbolBelief
        If ``v + |mu|^2`` is zero.
    """
    second = sym_var + abs(sym_mean) ** 2
    if second == 0.0:
        raise DegenerateSymbolBelief("symbol belief has zero second moment")
    return ScalarGaussian(y * sym_mean.conjugate() / second, noise_precision * second)


def ep_site_update(
    y: complex,
    pmf: np.ndarray,
    cavity: ScalarGaussian,
    site: ScalarGaussian,
    constellation: Constellation,
    noise_precision: float,
    step: float = 0.5,
    policy: str = "skip-update",
) -> tuple[ScalarGaussian, ScalarGaussian]:
    """One expectation-propagation site refinement.

    Mixes the cavity with the per-symbol observation likelihoods, moment
    matches the tilted belief, damps it towards the current belief
    (cavity times site) by ``step`` on natural parameters, and divides
    the cavity back out. Under the "skip-update" policy a refinement that
    would need negative site precision leaves the site unchanged.

    Returns
    -------
    (new_site, new_belief)
    """
    if policy != "skip-update":
        raise ValueError(f"unsupported policy {policy!r}")
    points = constellation.points
    energy = np.abs(points) ** 2
    pmf = np.asarray(pmf, dtype=np.float64)
    lam_cav = cavity.precision
    eta_cav = lam_cav * cavity.mean if lam_cav > 0.0 else 0.0 + 0.0j

    comp_prec = lam_cav + noise_precision * energy
    comp_mean = (eta_cav + noise_precision * y * points.conj()) / comp_prec
    with np.errstate(divide="ignore"):
        log_pmf = np.log(pmf)
    if lam_cav > 0.0:
        evid_var = 1.0 / noise_precision + energy / lam_cav
        logw = log_pmf - np.log(evid_var) - np.abs(y - cavity.mean * points) ** 2 / evid_var
    else:
        # Flat cavity: the evidence of symbol s integrates to 1 / |s|^2.
        if np.any(energy == 0.0):
            raise ZeroModulusSymbol("flat cavity needs an alphabet without zero points")
        logw = log_pmf - np.log(energy)
    logw -= logw.max()
    weights = np.exp(logw)
    weights /= weights.sum()
    tilted = mixture_moments(
        GaussianMixture(
            weights,
            tuple(ScalarGaussian(m, p) for m, p in zip(comp_mean, comp_prec)),
        )
    )

    lam_tilted = tilted.precision
    old_belief = product(cavity, site)
    lam_damped = step * lam_tilted + (1.0 - step) * old_belief.precision
    eta_damped = step * lam_tilted * tilted.mean + (1.0 - step) * (
        old_belief.precision * old_belief.mean
    )
    lam_new = lam_damped - lam_cav
    if lam_new < 0.0:
        return site, old_belief
    if lam_new == 0.0:
        new_site = ScalarGaussian.flat()
    else:
        new_site = ScalarGaussian((eta_damped - eta_cav) / lam_new, lam_new)
    belief = ScalarGaussian(
        eta_damped / lam_damped if lam_damped > 0.0 else 0.0, lam_damped
    )
    return new_site, belief


def channel_smoothing(
    state: ReceiverState, prior: JointGaussian
) -> tuple[np.ndarray, np.ndarray]:
    """Smooth the observation messages against the prior, updating the state.

    Fills ``ext_mean``/``ext_prec`` with the extrinsic messages and
    returns the posterior marginals ``(post_mean, post_var)``.
    """
    post_mean, post_var, ext_mean, ext_prec = smooth_factored(
        prior.factor_matrix(), prior.mean, state.obs_mean, state.obs_prec
    )
    state.ext_mean = ext_mean
    state.ext_prec = ext_prec
    return post_mean, post_var


def channel_belief_combine(
    obs: ScalarGaussian, extrinsic: ScalarGaussian, collapse_to_mean: bool = False
) -> ScalarGaussian:
    """Belief at one position: the product of observation and extrinsic.

    ``collapse_to_mean`` forces a point mass at the combined mean (the
    expectation-maximisation convention).

    Raises
    ------
    BothFlat
        If both inputs are flat; the belief would be improper.
    """
    if obs.is_flat and extrinsic.is_flat:
        raise BothFlat("observation and extrinsic message are both flat")
    belief = product(obs, extrinsic)
    if collapse_to_mean:
        return ScalarGaussian(belief.mean, np.inf)
    return belief


def _prob_one(llr: np.ndarray) -> np.ndarray:
    """Probability of a 1 from an LLR (log p0 - log p1), exact at infinities."""
    return expit(-llr)


def detector_inputs(
    algorithm: str, state: ReceiverState, data_idx: np.ndarray
) -> tuple[np.ndarray, np.ndarray, str]:
    """Channel moments and likelihood variant feeding the symbol detector.

    The extrinsic-message algorithms ("bp-ga", "ep") integrate the
    channel out under its extrinsic moments; "bp-mf" takes the belief
    moments into the mean-field likelihood; "bp-em" and "perfect-csi"
    are the same with the belief collapsed to its mean.
    """
    if algorithm in ("bp-ga", "ep"):
        return state.ext_mean[data_idx], 1.0 / state.ext_prec[data_idx], "extrinsic"
    if algorithm == "bp-mf":
        return state.belief_mean[data_idx], 1.0 / state.belief_prec[data_idx], "mean-field"
    if algorithm in ("bp-em", "perfect-csi"):
        return state.belief_mean[data_idx], np.zeros(data_idx.size), "mean-field"
    raise ValueError(f"unknown algorithm {algorithm!r}")


def run_receiver(
    layout: FrameLayout,
    prior: JointGaussian,
    y: np.ndarray,
    cfg: ReceiverConfig,
    h_true: np.ndarray | None = None,
    info_true: np.ndarray | None = None,
    coded_true: np.ndarray | None = None,
) -> tuple[np.ndarray, list[IterationDiagnostic]]:
    """Run one receiver over one frame.

    Parameters
    ----------
    layout, prior
        Frame structure and the channel prior over its positions.
    y : (n_total,) complex
        Received frame.
    cfg : ReceiverConfig
    h_true, info_true, coded_true : optional truth
        When given, each iteration's diagnostic reports the channel mean
        square error and the hard-decision error counts against them.
        ``h_true`` is required by the "perfect-csi" algorithm.

    Returns
    -------
    (info_bits, diagnostics)
        Hard information-bit decisions of the final iteration and the
        per-iteration trace.
    """
    y = np.asarray(y, dtype=np.complex128)
    n = layout.n_total
    if y.shape != (n,):
        raise ValueError(f"received vector must have shape ({n},)")
    if prior.dim != n:
        raise ValueError("prior dimension does not match the frame")
    if cfg.algorithm == "perfect-csi" and h_true is None:
        raise ValueError("perfect-csi needs the true channel")

    const = layout.constellation
    points = const.points
    energy = np.abs(points) ** 2
    didx = layout.data_idx
    gamma = cfg.noise_precision
    n_code = layout.code.coded_length
    n_data = layout.n_data

    state = ReceiverState(
        obs_mean=np.zeros(n, dtype=np.complex128),
        obs_prec=np.zeros(n),
        ext_mean=np.zeros(n, dtype=np.complex128),
        ext_prec=np.zeros(n),
        belief_mean=np.zeros(n, dtype=np.complex128),
        belief_prec=np.zeros(n),
        llr_feedback=interleave(
            layout.interleaver,
            np.concatenate([np.zeros(n_code), np.full(layout.n_filler, np.inf)]),
        ),
    )
    pilot_energy = np.abs(layout.pilot_symbols) ** 2
    if np.any(pilot_energy == 0.0):
        raise ZeroModulusSymbol("pilot symbols must have nonzero modulus")
    state.obs_mean[layout.pilot_idx] = (
        y[layout.pilot_idx] * layout.pilot_symbols.conj() / pilot_energy
    )
    state.obs_prec[layout.pilot_idx] = gamma * pilot_energy

    factor = prior.factor_matrix()
    prev_sym_logw: np.ndarray | None = None
    diagnostics: list[IterationDiagnostic] = []
    info_hat = np.zeros(layout.code.info_length, dtype=np.uint8)

    for iteration in range(1, cfg.iterations + 1):
        state.iteration = iteration
        llr_fb = state.llr_feedback.reshape(n_data, const.bits_per_symbol)
        ep_skipped = 0

        # Step 1: refresh data-position observation messages from feedback.
        if iteration > 1 and cfg.algorithm != "perfect-csi":
            state.beta = batch_symbol_pmf(const, _prob_one(llr_fb))
            if cfg.algorithm == "bp-ga":
                mixw = state.beta / energy[None, :]
                mixw /= mixw.sum(axis=1, keepdims=True)
                comp_mean = y[didx, None] * points.conj()[None, :] / energy[None, :]
                mean = (mixw * comp_mean).sum(axis=1)
                second = (mixw * (np.abs(comp_mean) ** 2 + 1.0 / (gamma * energy))).sum(axis=1)
                var = np.maximum(second - np.abs(mean) ** 2, 0.0)
                state.obs_mean[didx] = mean
                state.obs_prec[didx] = 1.0 / var
            elif cfg.algorithm == "ep":
                ep_skipped = _kernels.ep_sweep(
                    factor,
                    prior.mean,
                    y,
                    state.obs_mean,
                    state.obs_prec,
                    didx,
                    state.beta,
                    points,
                    gamma,
                    cfg.ep_step,
                )
            else:  # bp-mf, bp-em
                logpost = np.log(state.beta, where=state.beta > 0.0, out=np.full_like(state.beta, -np.inf))
                logpost = logpost + prev_sym_logw
                logpost -= logpost.max(axis=1, keepdims=True)
                pmf = np.exp(logpost)
                pmf /= pmf.sum(axis=1, keepdims=True)
                mu_x = pmf @ points
                second = pmf @ energy
                state.obs_mean[didx] = y[didx] * mu_x.conj() / second
                state.obs_prec[didx] = gamma * second

        # Step 2: smoothing and belief.
        if cfg.algorithm == "perfect-csi":
            state.belief_mean = np.asarray(h_true, dtype=np.complex128)
            state.belief_prec = np.full(n, np.inf)
        else:
            channel_smoothing(state, prior)
            state.belief_prec = state.obs_prec + state.ext_prec
            if np.any(state.belief_prec == 0.0):
                raise BothFlat("flat belief: observation and extrinsic both flat")
            state.belief_mean = (
                state.obs_prec * state.obs_mean + state.ext_prec * state.ext_mean
            ) / state.belief_prec
        state.validate()

        # Step 3: detect, demap, decode, feed back.
        chan_mean, chan_var, variant = detector_inputs(cfg.algorithm, state, didx)
        sym_logw = batch_gaussian_symbol_loglik(
            const, y[didx], chan_mean, chan_var, gamma, variant, cfg.symbol_exponent
        )
        if variant == "mean-field":
            prev_sym_logw = sym_logw

        llr_demap = batch_bit_llrs(const, sym_logw, llr_fb)
        llr_deint = deinterleave(layout.interleaver, llr_demap.reshape(-1))
        llr_dec_in = llr_deint[:n_code]
        app_coded, app_info = decode_siso(layout.code, llr_dec_in)
        ext_coded = extrinsic_llrs(app_coded, llr_dec_in)
        state.llr_feedback = interleave(
            layout.interleaver,
            np.concatenate([ext_coded, np.full(layout.n_filler, np.inf)]),
        )
        info_hat = hard_decide(app_info)

        mse = None
        if h_true is not None:
            mse = float(np.mean(np.abs(state.belief_mean - h_true) ** 2))
        info_err = None
        if info_true is not None:
            info_err = int(np.sum(info_hat != np.asarray(info_true, dtype=np.uint8)))
        coded_err = None
        if coded_true is not None:
            coded_err = int(
                np.sum(hard_decide(app_coded) != np.asarray(coded_true, dtype=np.uint8))
            )
        diagnostics.append(
            IterationDiagnostic(
                iteration=iteration,
                channel_mse=mse,
                coded_bit_errors=coded_err,
                info_bit_errors=info_err,
                ep_skipped=int(ep_skipped),
            )
        )
    return info_hat, diagnostics
