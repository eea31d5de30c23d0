"""Small dense linear-algebra kernels shared by the tensor-network code."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def svd(M: np.ndarray):
    try:
        return sla.svd(M, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        return sla.svd(M, full_matrices=False, lapack_driver="gesvd", check_finite=False)


def truncation_rank(S: np.ndarray, max_bond: int, tol: float) -> int:
    """Number of singular values to keep.

    Keeps the smallest rank whose discarded weight (relative to the total) is
    at most ``tol``, capped at ``max_bond``.  Singular values degenerate with
    the last kept one are kept as well while the cap allows it.
    """
    w = S**2
    total = w.sum()
    if total == 0.0:
        return 1
    # tail[k] = weight discarded when keeping k values
    tail = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]]) / total
    k = int(np.argmax(tail <= tol))
    k = max(1, min(k, max_bond, len(S)))
    while k < min(max_bond, len(S)) and S[k] >= S[k - 1] * (1 - 1e-12):
        k += 1
    return k


def truncated_svd(M: np.ndarray, max_bond: int, tol: float):
    """SVD truncated by :func:`truncation_rank`.

    Returns ``U, S, Vh, discarded`` where ``discarded`` is the dropped weight
    relative to ``||M||_F^2``.
    """
    U, S, Vh = svd(M)
    k = truncation_rank(S, max_bond, tol)
    total = float(np.sum(S**2))
    discarded = float(np.sum(S[k:] ** 2)) / total if total > 0 else 0.0
    return U[:, :k], S[:k], Vh[:k, :], discarded


def lanczos_expm(matvec, v: np.ndarray, tau: complex, tol: float = 1e-12, max_krylov: int = 40):
    """``exp(tau * H) v`` by Lanczos with full reorthogonalization.

    ``H`` must be Hermitian.  The step is split into substeps when the
    Krylov space of size ``max_krylov`` cannot reach ``tol``.
    """
    shape = v.shape
    w = v.reshape(-1).astype(np.result_type(v.dtype, np.asarray(tau).dtype, np.complex128))
    remaining = 1.0
    frac = 1.0
    out = w
    while remaining > 1e-15:
        step = min(frac, remaining)
        res, ok = _lanczos_expm_once(matvec, out, tau * step, tol, max_krylov, shape)
        if not ok:
            frac = step / 2
            if frac < 1e-6:
                raise RuntimeError("Lanczos exponential failed to converge")
            continue
        out = res
        remaining -= step
    return out.reshape(shape)


def _lanczos_expm_once(matvec, v, tau, tol, max_krylov, shape):
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy(), True
    n = v.size
    m_max = min(max_krylov, n)
    V = np.zeros((m_max + 1, n), dtype=v.dtype)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = v / beta0
    for j in range(m_max):
        w = matvec(V[j].reshape(shape)).reshape(-1)
        alpha[j] = np.real(np.vdot(V[j], w))
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
        # full reorthogonalization
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        m = j + 1
        T = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
        evals, evecs = np.linalg.eigh(T)
        coef = evecs @ (np.exp(tau * evals) * evecs[0].conj())
        err = abs(beta[j] * coef[-1])
        if err < tol or beta[j] < 1e-14 or m == n:
            return beta0 * (coef @ V[:m]), True
        V[j + 1] = w / beta[j]
    return None, False


def lowest_eigenpair(matvec, v0: np.ndarray, tol: float = 1e-12, max_krylov: int = 30,
                     max_restarts: int = 60):
    """Lowest eigenpair of a Hermitian operator by restarted Lanczos."""
    shape = v0.shape
    x = v0.reshape(-1).copy()
    nrm = np.linalg.norm(x)
    if nrm == 0:
        x = np.random.default_rng(0).standard_normal(x.shape).astype(v0.dtype)
        nrm = np.linalg.norm(x)
    x /= nrm
    n = x.size
    if n <= max_krylov:
        # dense fallback for tiny problems
        H = np.zeros((n, n), dtype=np.result_type(v0.dtype, np.float64))
        for i in range(n):
            e = np.zeros(n, dtype=H.dtype)
            e[i] = 1.0
            H[:, i] = matvec(e.reshape(shape)).reshape(-1)
        H = 0.5 * (H + H.conj().T)
        evals, evecs = np.linalg.eigh(H)
        return float(evals[0]), evecs[:, 0].reshape(shape)
    energy = np.inf
    for _ in range(max_restarts):
        m_max = min(max_krylov, n)
        V = np.zeros((m_max + 1, n), dtype=x.dtype)
        alpha = np.zeros(m_max)
        beta = np.zeros(m_max)
        V[0] = x
        m = 0
        for j in range(m_max):
            w = matvec(V[j].reshape(shape)).reshape(-1)
            alpha[j] = np.real(np.vdot(V[j], w))
            w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
            w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
            beta[j] = np.linalg.norm(w)
            m = j + 1
            if beta[j] < 1e-13:
                break
            V[j + 1] = w / beta[j]
        T = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
        evals, evecs = np.linalg.eigh(T)
        x = evecs[:, 0] @ V[:m]
        x /= np.linalg.norm(x)
        resid = abs(beta[m - 1] * evecs[-1, 0])
        new_energy = float(evals[0])
        if resid < tol or abs(new_energy - energy) < tol * 1e-2 or beta[m - 1] < 1e-13:
            return new_energy, x.reshape(shape)
        energy = new_energy
    return energy, x.reshape(shape)
