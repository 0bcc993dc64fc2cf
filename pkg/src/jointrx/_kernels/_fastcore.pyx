# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: log-domain forward-backward and the ordered
expectation-propagation site sweep.

Semantics mirror jointrx._kernels.pure exactly; that module is the
reference. Only inner-loop mechanics differ (explicit recursions and a
hand-rolled small complex Cholesky instead of LAPACK calls).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, log, log1p, sqrt

cnp.import_array()


cdef inline double _lae(double a, double b) noexcept nogil:
    # logaddexp with the same infinity behaviour as the NumPy ufunc.
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a >= b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def bcjr(
    double[::1] prior_llrs,
    cnp.int64_t[:, ::1] next_state,
    cnp.uint8_t[:, :, ::1] out_bits,
    Py_ssize_t n_info,
):
    """Posterior coded-bit and info-bit LLRs; see the reference backend."""
    cdef Py_ssize_t n_states = next_state.shape[0]
    cdef Py_ssize_t n_streams = out_bits.shape[2]
    cdef Py_ssize_t n_branch = 2 * n_states
    cdef Py_ssize_t n_steps = prior_llrs.shape[0] // n_streams
    cdef Py_ssize_t t, s, b, j, u, pos, k

    lp0_arr = np.empty(n_steps * n_streams)
    lp1_arr = np.empty(n_steps * n_streams)
    cdef double[::1] lp0 = lp0_arr, lp1 = lp1_arr
    cdef double llr
    for pos in range(n_steps * n_streams):
        llr = prior_llrs[pos]
        lp0[pos] = -_lae(0.0, -llr)
        lp1[pos] = -_lae(0.0, llr)

    bm_arr = np.empty((n_steps, n_branch))
    cdef double[:, ::1] bm = bm_arr
    cdef double acc
    for t in range(n_steps):
        for b in range(n_branch):
            s = b >> 1
            u = b & 1
            if u == 1 and t >= n_info:
                bm[t, b] = -INFINITY
                continue
            acc = 0.0
            for j in range(n_streams):
                if out_bits[s, u, j]:
                    acc += lp1[t * n_streams + j]
                else:
                    acc += lp0[t * n_streams + j]
            bm[t, b] = acc

    # Incoming branches grouped by destination, in ascending branch order.
    in_branch_arr = np.empty((n_states, 2), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] in_branch = in_branch_arr
    fill_arr = np.zeros(n_states, dtype=np.int64)
    cdef cnp.int64_t[::1] fill = fill_arr
    cdef Py_ssize_t dst
    for b in range(n_branch):
        dst = next_state[b >> 1, b & 1]
        in_branch[dst, fill[dst]] = b
        fill[dst] += 1

    alpha_arr = np.full((n_steps + 1, n_states), -INFINITY)
    beta_arr = np.full((n_steps + 1, n_states), -INFINITY)
    cdef double[:, ::1] alpha = alpha_arr, beta = beta_arr
    cand_arr = np.empty(n_branch)
    cdef double[::1] cand = cand_arr
    cdef double peak, stage

    alpha[0, 0] = 0.0
    for t in range(n_steps):
        for b in range(n_branch):
            cand[b] = alpha[t, b >> 1] + bm[t, b]
        peak = -INFINITY
        for s in range(n_states):
            alpha[t + 1, s] = _lae(cand[in_branch[s, 0]], cand[in_branch[s, 1]])
            if alpha[t + 1, s] > peak:
                peak = alpha[t + 1, s]
        if peak != -INFINITY:
            for s in range(n_states):
                alpha[t + 1, s] -= peak

    beta[n_steps, 0] = 0.0
    for t in range(n_steps - 1, -1, -1):
        peak = -INFINITY
        for s in range(n_states):
            stage = _lae(
                beta[t + 1, next_state[s, 0]] + bm[t, 2 * s],
                beta[t + 1, next_state[s, 1]] + bm[t, 2 * s + 1],
            )
            beta[t, s] = stage
            if stage > peak:
                peak = stage
        if peak != -INFINITY:
            for s in range(n_states):
                beta[t, s] -= peak

    app_coded_arr = np.empty(n_steps * n_streams)
    app_info_arr = np.empty(n_info)
    cdef double[::1] app_coded = app_coded_arr
    cdef double[::1] app_info = app_info_arr
    post_arr = np.empty(n_branch)
    cdef double[::1] post = post_arr
    cdef double m0, m1, a0, a1

    for t in range(n_steps):
        for b in range(n_branch):
            post[b] = alpha[t, b >> 1] + bm[t, b] + beta[t + 1, next_state[b >> 1, b & 1]]
        if t < n_info:
            app_info[t] = _lse_group(post, None, 0, 0) - _lse_group(post, None, 0, 1)
        for j in range(n_streams):
            a0 = _lse_group(post, out_bits, j, 0)
            a1 = _lse_group(post, out_bits, j, 1)
            app_coded[t * n_streams + j] = a0 - a1
    return app_coded_arr, app_info_arr


cdef double _lse_group(
    double[::1] post, cnp.uint8_t[:, :, ::1] out_bits, Py_ssize_t j, int want
):
    # logsumexp over branches whose selector equals `want`; selector is the
    # input bit when out_bits is None, else output bit j of the branch.
    cdef Py_ssize_t n_branch = post.shape[0]
    cdef Py_ssize_t b
    cdef int sel
    cdef double peak = -INFINITY
    cdef double total = 0.0
    for b in range(n_branch):
        sel = _selector(out_bits, b, j)
        if sel == want and post[b] > peak:
            peak = post[b]
    if peak == -INFINITY:
        return -INFINITY
    for b in range(n_branch):
        sel = _selector(out_bits, b, j)
        if sel == want:
            total += exp(post[b] - peak)
    return peak + log(total)


cdef inline int _selector(cnp.uint8_t[:, :, ::1] out_bits, Py_ssize_t b, Py_ssize_t j):
    if out_bits is None:
        return <int> (b & 1)
    return <int> out_bits[b >> 1, b & 1, j]


def ep_sweep(
    cnp.complex128_t[:, ::1] factor,
    cnp.complex128_t[::1] prior_mean,
    cnp.complex128_t[::1] y,
    cnp.complex128_t[::1] obs_mean,
    double[::1] obs_prec,
    cnp.int64_t[::1] data_idx,
    double[:, ::1] beta,
    cnp.complex128_t[::1] points,
    double gamma,
    double step,
):
    """In-place ordered EP site sweep; see the reference backend."""
    cdef Py_ssize_t n = factor.shape[0]
    cdef Py_ssize_t rank = factor.shape[1]
    cdef Py_ssize_t n_sites = data_idx.shape[0]
    cdef Py_ssize_t n_sym = points.shape[0]
    cdef Py_ssize_t k, i, p, q, c, sym

    j_arr = np.eye(rank, dtype=np.complex128)
    cdef cnp.complex128_t[:, ::1] j_info = j_arr
    eta_arr = np.zeros(rank, dtype=np.complex128)
    cdef cnp.complex128_t[::1] eta = eta_arr
    cdef double complex d

    # J = I + A^H diag(lam) A and eta = A^H (lam (mu_o - mu_p)).
    for i in range(n):
        if obs_prec[i] > 0.0:
            d = obs_prec[i] * (obs_mean[i] - prior_mean[i])
            for p in range(rank):
                eta[p] = eta[p] + d * factor[i, p].conjugate()
                for q in range(rank):
                    j_info[p, q] = j_info[p, q] + obs_prec[i] * factor[i, p].conjugate() * factor[i, q]

    chol_arr = np.empty((rank, rank), dtype=np.complex128)
    vec_arr = np.empty((4, rank), dtype=np.complex128)
    cdef cnp.complex128_t[:, ::1] chol = chol_arr
    cdef cnp.complex128_t[:, ::1] work = vec_arr
    abs2_arr = np.empty(n_sym)
    logb_arr = np.empty(n_sym)
    logw_arr = np.empty(n_sym)
    cm_arr = np.empty(n_sym, dtype=np.complex128)
    cp_arr = np.empty(n_sym)
    cdef double[::1] abs2 = abs2_arr, logw = logw_arr, logb = logb_arr, comp_prec = cp_arr
    cdef cnp.complex128_t[::1] comp_mean = cm_arr
    for sym in range(n_sym):
        abs2[sym] = points[sym].real * points[sym].real + points[sym].imag * points[sym].imag

    cdef Py_ssize_t skipped = 0
    cdef double marg_var, lam_post, lam_cav, lam_b, lam_damped, lam_new, delta_lam
    cdef double var_b, second, evid_var, peak, wsum, re, im, wval
    cdef double complex marg_mean, eta_post, eta_cav, mu_cav, mu_b, eta_damped, mu_new
    cdef double complex acc, delta_eta, resid

    for k in range(n_sites):
        i = data_idx[k]
        for sym in range(n_sym):
            wval = beta[k, sym]
            logb[sym] = log(wval) if wval > 0.0 else -INFINITY

        if not _cholesky(j_info, chol, rank):
            skipped += 1
            continue
        # work[0] = L^{-1} conj(a_i): marginal variance = ||work[0]||^2.
        for p in range(rank):
            work[0, p] = factor[i, p].conjugate()
        _forward_solve(chol, work, 0, rank)
        marg_var = 0.0
        for p in range(rank):
            marg_var += work[0, p].real * work[0, p].real + work[0, p].imag * work[0, p].imag
        # work[1] = J^{-1} eta: marginal mean = prior + a_i . work[1].
        for p in range(rank):
            work[1, p] = eta[p]
        _forward_solve(chol, work, 1, rank)
        _backward_solve(chol, work, 1, rank)
        marg_mean = prior_mean[i]
        for p in range(rank):
            marg_mean = marg_mean + factor[i, p] * work[1, p]

        lam_post = 1.0 / marg_var
        eta_post = marg_mean * lam_post
        lam_cav = lam_post - obs_prec[i]
        if lam_cav <= 0.0:
            skipped += 1
            continue
        eta_cav = eta_post - obs_prec[i] * obs_mean[i]
        mu_cav = eta_cav / lam_cav

        peak = -INFINITY
        for sym in range(n_sym):
            comp_prec[sym] = lam_cav + gamma * abs2[sym]
            comp_mean[sym] = (eta_cav + gamma * y[i] * points[sym].conjugate()) / comp_prec[sym]
            evid_var = 1.0 / gamma + abs2[sym] / lam_cav
            resid = y[i] - mu_cav * points[sym]
            re = resid.real
            im = resid.imag
            logw[sym] = logb[sym] - log(evid_var) - (re * re + im * im) / evid_var
            if logw[sym] > peak:
                peak = logw[sym]
        wsum = 0.0
        for sym in range(n_sym):
            logw[sym] = exp(logw[sym] - peak)
            wsum += logw[sym]
        mu_b = 0.0
        second = 0.0
        for sym in range(n_sym):
            wval = logw[sym] / wsum
            mu_b = mu_b + wval * comp_mean[sym]
            second += wval * (
                comp_mean[sym].real * comp_mean[sym].real
                + comp_mean[sym].imag * comp_mean[sym].imag
                + 1.0 / comp_prec[sym]
            )
        var_b = second - (mu_b.real * mu_b.real + mu_b.imag * mu_b.imag)
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
        if lam_new > 0.0:
            mu_new = mu_new / lam_new
        else:
            mu_new = 0.0

        delta_lam = lam_new - obs_prec[i]
        delta_eta = lam_new * (mu_new - prior_mean[i]) - obs_prec[i] * (obs_mean[i] - prior_mean[i])
        for p in range(rank):
            eta[p] = eta[p] + delta_eta * factor[i, p].conjugate()
            for q in range(rank):
                j_info[p, q] = j_info[p, q] + delta_lam * factor[i, p].conjugate() * factor[i, q]
        obs_prec[i] = lam_new
        obs_mean[i] = mu_new
    return skipped


cdef bint _cholesky(cnp.complex128_t[:, ::1] mat, cnp.complex128_t[:, ::1] low, Py_ssize_t rank):
    # Lower Cholesky of a Hermitian positive definite matrix; False if it
    # loses positive definiteness numerically.
    cdef Py_ssize_t p, q, c
    cdef double diag
    cdef double complex acc
    for p in range(rank):
        diag = mat[p, p].real
        for c in range(p):
            diag -= low[p, c].real * low[p, c].real + low[p, c].imag * low[p, c].imag
        if diag <= 0.0:
            return False
        low[p, p] = sqrt(diag)
        for q in range(p + 1, rank):
            acc = mat[q, p]
            for c in range(p):
                acc = acc - low[q, c] * low[p, c].conjugate()
            low[q, p] = acc / low[p, p].real
    return True


cdef void _forward_solve(
    cnp.complex128_t[:, ::1] low, cnp.complex128_t[:, ::1] work, Py_ssize_t row, Py_ssize_t rank
):
    # Solve L x = b in place for work[row].
    cdef Py_ssize_t p, c
    cdef double complex acc
    for p in range(rank):
        acc = work[row, p]
        for c in range(p):
            acc = acc - low[p, c] * work[row, c]
        work[row, p] = acc / low[p, p].real


cdef void _backward_solve(
    cnp.complex128_t[:, ::1] low, cnp.complex128_t[:, ::1] work, Py_ssize_t row, Py_ssize_t rank
):
    # Solve L^H x = b in place for work[row].
    cdef Py_ssize_t p, c
    cdef double complex acc
    for p in range(rank - 1, -1, -1):
        acc = work[row, p]
        for c in range(p + 1, rank):
            acc = acc - low[c, p].conjugate() * work[row, c]
        work[row, p] = acc / low[p, p].real
