"""Compiled inner loops for the master-equation integrators.

Operators are packed as CSR rows addressing one global ``(idx, val)`` pool:
``ptr[o, i]:ptr[o, i+1]`` is row ``i`` of operator ``o``. Operator 0 is the
effective generator ``K = -iH - 1/2 sum L^dag L``; operators ``1..n_ops-1``
are jump operators. Values are supplied per evaluation point so that
time-dependent coefficients never touch the structure.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _lmul(ptr, idx, val, X, out):
    # out += A @ X
    d = X.shape[0]
    for i in range(d):
        for p in range(ptr[i], ptr[i + 1]):
            a = val[p]
            k = idx[p]
            for j in range(d):
                out[i, j] += a * X[k, j]


@njit(cache=True, nogil=True)
def _rmul_dag(ptr, idx, val, X, out):
    # out += X @ A^dagger ; (X A^dag)[i, j] = sum_k X[i, k] conj(A[j, k])
    d = X.shape[0]
    for i in range(d):
        for j in range(d):
            acc = 0j
            for p in range(ptr[j], ptr[j + 1]):
                acc += X[i, idx[p]] * np.conj(val[p])
            out[i, j] += acc


@njit(cache=True, nogil=True)
def _add_dagger_inplace(M):
    # M <- M + M^dagger
    d = M.shape[0]
    for i in range(d):
        M[i, i] = 2.0 * M[i, i].real
        for j in range(i + 1, d):
            a = M[i, j]
            b = M[j, i]
            M[i, j] = a + np.conj(b)
            M[j, i] = b + np.conj(a)


@njit(cache=True, nogil=True)
def lindblad_rhs(X, ptr, idx, val, hermitian, out, work):
    d = X.shape[0]
    n_ops = ptr.shape[0]
    out[:, :] = 0.0
    _lmul(ptr[0], idx, val, X, out)
    if hermitian:
        _add_dagger_inplace(out)
    else:
        _rmul_dag(ptr[0], idx, val, X, out)
    for o in range(1, n_ops):
        if ptr[o, d] == ptr[o, 0]:
            continue
        work[:, :] = 0.0
        _lmul(ptr[o], idx, val, X, work)
        _rmul_dag(ptr[o], idx, val, work, out)


@njit(cache=True, nogil=True)
def _trace_prod(O, X):
    d = X.shape[0]
    acc = 0j
    for i in range(d):
        for j in range(d):
            acc += O[i, j] * X[j, i]
    return acc


@njit(cache=True, nogil=True)
def rk4_chunk(X, dts, vals, ptr, idx, hermitian, obs, out_obs):
    """Classic RK4 over ``len(dts)`` steps.

    ``vals[n, s]`` holds operator values at the start (s=0), midpoint (s=1)
    and end (s=2) of step ``n``. ``out_obs[n]`` receives ``tr(O X)`` after
    step ``n``.
    """
    d = X.shape[0]
    k1 = np.empty((d, d), dtype=np.complex128)
    k2 = np.empty((d, d), dtype=np.complex128)
    k3 = np.empty((d, d), dtype=np.complex128)
    k4 = np.empty((d, d), dtype=np.complex128)
    tmp = np.empty((d, d), dtype=np.complex128)
    work = np.empty((d, d), dtype=np.complex128)
    n_obs = obs.shape[0]
    for n in range(dts.shape[0]):
        h = dts[n]
        lindblad_rhs(X, ptr, idx, vals[n, 0], hermitian, k1, work)
        for i in range(d):
            for j in range(d):
                tmp[i, j] = X[i, j] + 0.5 * h * k1[i, j]
        lindblad_rhs(tmp, ptr, idx, vals[n, 1], hermitian, k2, work)
        for i in range(d):
            for j in range(d):
                tmp[i, j] = X[i, j] + 0.5 * h * k2[i, j]
        lindblad_rhs(tmp, ptr, idx, vals[n, 1], hermitian, k3, work)
        for i in range(d):
            for j in range(d):
                tmp[i, j] = X[i, j] + h * k3[i, j]
        lindblad_rhs(tmp, ptr, idx, vals[n, 2], hermitian, k4, work)
        for i in range(d):
            for j in range(d):
                X[i, j] += h / 6.0 * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
        if hermitian:
            for i in range(d):
                X[i, i] = X[i, i].real
                for j in range(i + 1, d):
                    m = 0.5 * (X[i, j] + np.conj(X[j, i]))
                    X[i, j] = m
                    X[j, i] = np.conj(m)
        for q in range(n_obs):
            out_obs[n, q] = _trace_prod(obs[q], X)


@njit(cache=True, nogil=True)
def sme_chunk(X, dt, vals, dW, ptr, idx, s_op, renormalize, obs, out_signal, out_obs):
    """Euler-Maruyama steps of the diffusive homodyne master equation.

    ``s_op`` is the index of the monitored operator S. For step ``n`` the
    record holds ``<S + S^dag>`` and the observables of the state at the
    start of the step; the caller adds ``dW/dt`` to form the current.
    Returns the most negative diagonal element seen (cheap blow-up guard).
    """
    d = X.shape[0]
    f = np.empty((d, d), dtype=np.complex128)
    work = np.empty((d, d), dtype=np.complex128)
    sx = np.empty((d, d), dtype=np.complex128)
    n_obs = obs.shape[0]
    min_diag = 1.0
    for n in range(dW.shape[0]):
        v = vals[n]
        sx[:, :] = 0.0
        _lmul(ptr[s_op], idx, v, X, sx)
        m = 0.0
        for i in range(d):
            m += 2.0 * sx[i, i].real
        out_signal[n] = m
        for q in range(n_obs):
            out_obs[n, q] = _trace_prod(obs[q], X)
        lindblad_rhs(X, ptr, idx, v, True, f, work)
        w = dW[n]
        # S X + X S^dag - m X, with X Hermitian
        _add_dagger_inplace(sx)
        for i in range(d):
            for j in range(d):
                X[i, j] += dt * f[i, j] + w * (sx[i, j] - m * X[i, j])
        tr = 0.0
        for i in range(d):
            X[i, i] = X[i, i].real
            tr += X[i, i].real
            for j in range(i + 1, d):
                c = 0.5 * (X[i, j] + np.conj(X[j, i]))
                X[i, j] = c
                X[j, i] = np.conj(c)
        if renormalize:
            for i in range(d):
                for j in range(d):
                    X[i, j] /= tr
        for i in range(d):
            if X[i, i].real < min_diag:
                min_diag = X[i, i].real
    return min_diag


@njit(cache=True, nogil=True)
def _kraus_apply(ptr, idx, val, s_op, dt, dy, c, Y, out, t1, t2):
    # out = M Y with M = I + K dt + S dy + c S^2
    d = Y.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = Y[i, j]
    t1[:, :] = 0.0
    _lmul(ptr[0], idx, val, Y, t1)
    t2[:, :] = 0.0
    _lmul(ptr[s_op], idx, val, Y, t2)
    for i in range(d):
        for j in range(d):
            out[i, j] += dt * t1[i, j] + dy * t2[i, j]
    t1[:, :] = 0.0
    _lmul(ptr[s_op], idx, val, t2, t1)
    for i in range(d):
        for j in range(d):
            out[i, j] += c * t1[i, j]


@njit(cache=True, nogil=True)
def sme_kraus_chunk(X, dt, vals, dW, ptr, idx, s_op, obs, out_signal, out_obs):
    """Positivity-preserving first-order homodyne steps.

    ``X <- (M X M^dag + sum_k L_k X L_k^dag dt) / tr`` with
    ``M = I + K dt + S dy + (dy^2 - dt) S^2 / 2`` and ``dy = <S + S^dag> dt + dW``;
    the sum runs over the unmonitored jump operators. Agrees with the
    Euler-Maruyama update to first order but every step is a completely
    positive map. Recording convention as in :func:`sme_chunk`.
    """
    d = X.shape[0]
    n_ops = ptr.shape[0]
    A = np.empty((d, d), dtype=np.complex128)
    B = np.empty((d, d), dtype=np.complex128)
    Ah = np.empty((d, d), dtype=np.complex128)
    t1 = np.empty((d, d), dtype=np.complex128)
    t2 = np.empty((d, d), dtype=np.complex128)
    n_obs = obs.shape[0]
    min_diag = 1.0
    for n in range(dW.shape[0]):
        v = vals[n]
        t1[:, :] = 0.0
        _lmul(ptr[s_op], idx, v, X, t1)
        m = 0.0
        for i in range(d):
            m += 2.0 * t1[i, i].real
        out_signal[n] = m
        for q in range(n_obs):
            out_obs[n, q] = _trace_prod(obs[q], X)
        dy = m * dt + dW[n]
        c = 0.5 * (dy * dy - dt)
        _kraus_apply(ptr, idx, v, s_op, dt, dy, c, X, A, t1, t2)
        for i in range(d):
            for j in range(d):
                Ah[i, j] = np.conj(A[j, i])
        _kraus_apply(ptr, idx, v, s_op, dt, dy, c, Ah, B, t1, t2)
        for o in range(1, n_ops):
            if o == s_op or ptr[o, d] == ptr[o, 0]:
                continue
            t1[:, :] = 0.0
            _lmul(ptr[o], idx, v, X, t1)
            t2[:, :] = 0.0
            _rmul_dag(ptr[o], idx, v, t1, t2)
            for i in range(d):
                for j in range(d):
                    B[i, j] += dt * t2[i, j]
        tr = 0.0
        for i in range(d):
            tr += B[i, i].real
        for i in range(d):
            X[i, i] = B[i, i].real / tr
            for j in range(i + 1, d):
                cij = 0.5 * (B[i, j] + np.conj(B[j, i])) / tr
                X[i, j] = cij
                X[j, i] = np.conj(cij)
        for i in range(d):
            if X[i, i].real < min_diag:
                min_diag = X[i, i].real
    return min_diag
