"""NumPy reference implementations of the hot kernels.

These are the semantic ground truth for the compiled versions: same
signatures, same update order, same log-domain arithmetic. They favour
clarity over speed but vectorise across trellis branches and
constellation points, so they stay usable when the extension is absent.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.special import logsumexp


def bcjr(
    prior_llrs: np.ndarray,
    next_state: np.ndarray,
    out_bits: np.ndarray,
    n_info: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact forward-backward pass over a zero-tailed feedforward trellis.

    Parameters
    ----------
    prior_llrs : (n_steps * n_streams,) float
        Per-coded-bit priors, log p0 - log p1, infinities allowed.
    next_state : (S, 2) int
        Transition table, indexed by (state, input bit).
    out_bits : (S, 2, n_streams) uint8
        Output bits per transition.
    n_info : int
        Number of information steps; later steps force input 0 (the tail).

    Returns
    -------
    (app_coded, app_info)
        Posterior LLRs for every coded bit and for the information bits.
    """
    n_states, _, n_streams = out_bits.shape
    n_steps = prior_llrs.size // n_streams
    # Branch b = 2 * src + u.
    src = np.repeat(np.arange(n_states), 2)
    u_of_branch = np.tile(np.array([0, 1]), n_states)
    dst = next_state.reshape(-1)
    branch_bits = out_bits.reshape(-1, n_streams)

    # log p(bit = 0 / 1) from the LLR, exact at infinities.
    lp0 = -np.logaddexp(0.0, -prior_llrs)
    lp1 = -np.logaddexp(0.0, prior_llrs)
    lp = np.stack([lp0, lp1], axis=1).reshape(n_steps, n_streams, 2)

    # Branch metrics bm[t, b] = sum_j log p(bit_tj = branch output bit).
    bm = np.zeros((n_steps, 2 * n_states))
    for j in range(n_streams):
        bm += lp[:, j, :][:, branch_bits[:, j]]
    bm[n_info:, u_of_branch == 1] = -np.inf

    # Each state has exactly two incoming branches; group branch indices by dst.
    in_branch = np.argsort(dst, kind="stable").reshape(n_states, 2)

    alpha = np.full((n_steps + 1, n_states), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(n_steps):
        cand = alpha[t, src] + bm[t]
        stage = np.logaddexp(cand[in_branch[:, 0]], cand[in_branch[:, 1]])
        peak = stage.max()
        alpha[t + 1] = stage - peak if np.isfinite(peak) else stage

    beta = np.full((n_steps + 1, n_states), -np.inf)
    beta[n_steps, 0] = 0.0  # the zero tail terminates in state 0
    for t in range(n_steps - 1, -1, -1):
        cand = (beta[t + 1, dst] + bm[t]).reshape(n_states, 2)
        stage = np.logaddexp(cand[:, 0], cand[:, 1])
        peak = stage.max()
        beta[t] = stage - peak if np.isfinite(peak) else stage

    # Posterior branch metrics, then marginalise groups of branches.
    post = alpha[:-1][:, src] + bm + beta[1:][:, dst]
    info_llr = (
        logsumexp(post[:, u_of_branch == 0], axis=1)
        - logsumexp(post[:, u_of_branch == 1], axis=1)
    )[:n_info]
    app_coded = np.empty(n_steps * n_streams)
    for j in range(n_streams):
        ones = branch_bits[:, j] == 1
        app_coded[j::n_streams] = logsumexp(post[:, ~ones], axis=1) - logsumexp(
            post[:, ones], axis=1
        )
    return app_coded, info_llr


def ep_sweep(
    factor: np.ndarray,
    prior_mean: np.ndarray,
    y: np.ndarray,
    obs_mean: np.ndarray,
    obs_prec: np.ndarray,
    data_idx: np.ndarray,
    beta: np.ndarray,
    points: np.ndarray,
    gamma: float,
    step: float,
) -> int:
    """One ordered pass of expectation-propagation site updates, in place.

    The joint channel posterior is maintained in factor space: with prior
    factor ``A`` (n x r) and site precisions ``lam``,

        J = I + A^H diag(lam) A,   eta = A^H (lam * (site_mean - prior_mean)).

    For each data index, in the order given: form the cavity by removing
    the site from the local posterior marginal, mix the cavity with the
    per-symbol likelihoods weighted by ``beta``, moment-match, damp the
    matched belief towards the current marginal by ``step`` on natural
    parameters, and divide the cavity back out. A site whose update would
    need negative precision is skipped (kept unchanged); the return value
    counts the skips. ``obs_mean`` and ``obs_prec`` are updated in place.
    """
    n, rank = factor.shape
    abs2 = np.abs(points) ** 2
    with np.errstate(divide="ignore"):
        log_beta = np.log(beta)
    j_info = np.eye(rank, dtype=np.complex128) + (factor.conj().T * obs_prec) @ factor
    eta = factor.conj().T @ (obs_prec * (obs_mean - prior_mean))
    skipped = 0
    for k, i in enumerate(data_idx):
        row = factor[i]
        low = np.linalg.cholesky(j_info)
        half = scipy.linalg.solve_triangular(low, row.conj(), lower=True)
        marg_var = float(np.real(half.conj() @ half))
        marg_mean = prior_mean[i] + row @ scipy.linalg.cho_solve((low, True), eta)
        lam_post = 1.0 / marg_var
        eta_post = marg_mean * lam_post
        lam_cav = lam_post - obs_prec[i]
        if lam_cav <= 0.0:
            skipped += 1
            continue
        eta_cav = eta_post - obs_prec[i] * obs_mean[i]
        mu_cav = eta_cav / lam_cav

        # Per-symbol posterior components and evidence weights.
        comp_prec = lam_cav + gamma * abs2
        comp_mean = (eta_cav + gamma * y[i] * points.conj()) / comp_prec
        evid_var = 1.0 / gamma + abs2 / lam_cav
        logw = log_beta[k] - np.log(evid_var) - np.abs(y[i] - mu_cav * points) ** 2 / evid_var
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        mu_b = w @ comp_mean
        var_b = float(w @ (np.abs(comp_mean) ** 2 + 1.0 / comp_prec) - abs(mu_b) ** 2)
        if var_b <= 0.0:
            skipped += 1
            continue

        lam_b = 1.0 / var_b
        lam_damped = step * lam_b + (1.0 - step) * lam_post
        eta_damped = step * (mu_b * lam_b) + (1.0 - step) * eta_post
        lam_new = lam_damped - lam_cav
        if lam_new < 0.0:
            skipped += 1
            continue
        mu_new = eta_damped - eta_cav
        mu_new = mu_new / lam_new if lam_new > 0.0 else 0.0 + 0.0j

        delta_lam = lam_new - obs_prec[i]
        delta_eta = lam_new * (mu_new - prior_mean[i]) - obs_prec[i] * (obs_mean[i] - prior_mean[i])
        j_info += delta_lam * np.outer(row.conj(), row)
        eta += delta_eta * row.conj()
        obs_prec[i] = lam_new
        obs_mean[i] = mu_new
    return skipped
