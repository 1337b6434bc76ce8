"""Pure-numpy particle kernels; reference semantics for the compiled module."""

import numpy as np


def eigen_batch(R, cond_limit):
    """Eigendecomposition ``R[n] = V[n] diag(w[n]) Vinv[n]`` of every particle generator.

    ``ok[n]`` is False when the eigenvector matrix is singular or its 1-norm
    condition number exceeds ``cond_limit``; callers must not use the
    decomposition of those particles.
    """
    R = np.asarray(R, dtype=float)
    w, V = np.linalg.eig(R)
    w = w.astype(complex)
    V = V.astype(complex)
    ok = np.ones(len(R), dtype=bool)
    Vi = np.empty_like(V)
    for p in range(len(R)):
        try:
            Vi[p] = np.linalg.inv(V[p])
        except np.linalg.LinAlgError:
            ok[p] = False
            Vi[p] = 0
    cond = np.abs(V).sum(axis=1).max(axis=1) * np.abs(Vi).sum(axis=1).max(axis=1)
    ok &= np.isfinite(cond) & (cond <= cond_limit)
    return w, V, Vi, ok


def propagate_loglikes(w, V, Vi, r0, M, counts, t, floor):
    """Multinomial log-likelihood of ``counts`` for every particle at time ``t``."""
    c = Vi @ r0
    r = np.einsum("nik,nk->ni", V, np.exp(w * t) * c).real
    q = np.maximum(r @ M.T, floor)
    nz = counts > 0
    return np.log(q[:, nz]) @ counts[nz]
