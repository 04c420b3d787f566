"""Linear state recursion with forward-mode first and second derivatives.

Computes, for ``t = 0..n-1``,

    y_t = a + sum_{i=1}^{q} A_i z_{t-i} + sum_{j=1}^{q'} B_j y_{t-j}

with ``z_s = 0`` and ``y_s = y0`` for ``s < 0``. The coefficient tensors may
depend on theta (their derivatives are supplied) and so may the driver ``z``
(``dz``, ``d2z``). Shapes: ``a (k,)``, ``A (q, k, r)``, ``B (q', k, k)``,
``z (n, r)``; derivative arrays carry one or two leading ``d`` axes after the
lag axis.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _recursion(a, A, B, y0, z, da, dA, dB, dy0, dz, d2a, d2A, d2B, d2y0, d2z, order):
    n = z.shape[0]
    k = a.shape[0]
    r = z.shape[1]
    q = A.shape[0]
    qp = B.shape[0]
    d = da.shape[0]
    y = np.empty((n, k))
    dy = np.zeros((n if order >= 1 else 0, d, k))
    d2y = np.zeros((n if order >= 2 else 0, d, d, k))
    has_dz = dz.shape[0] > 0
    has_d2z = d2z.shape[0] > 0
    for t in range(n):
        for s in range(k):
            y[t, s] = a[s]
        for i in range(1, q + 1):
            if t - i < 0:
                break
            for s in range(k):
                acc = 0.0
                for u in range(r):
                    acc += A[i - 1, s, u] * z[t - i, u]
                y[t, s] += acc
        for j in range(1, qp + 1):
            for s in range(k):
                acc = 0.0
                for u in range(k):
                    prev = y[t - j, u] if t - j >= 0 else y0[u]
                    acc += B[j - 1, s, u] * prev
                y[t, s] += acc
        if order < 1:
            continue
        for p in range(d):
            for s in range(k):
                dy[t, p, s] = da[p, s]
        for i in range(1, q + 1):
            if t - i < 0:
                break
            for p in range(d):
                for s in range(k):
                    acc = 0.0
                    for u in range(r):
                        acc += dA[i - 1, p, s, u] * z[t - i, u]
                        if has_dz:
                            acc += A[i - 1, s, u] * dz[t - i, p, u]
                    dy[t, p, s] += acc
        for j in range(1, qp + 1):
            for p in range(d):
                for s in range(k):
                    acc = 0.0
                    for u in range(k):
                        if t - j >= 0:
                            acc += dB[j - 1, p, s, u] * y[t - j, u] + B[j - 1, s, u] * dy[t - j, p, u]
                        else:
                            acc += dB[j - 1, p, s, u] * y0[u] + B[j - 1, s, u] * dy0[p, u]
                    dy[t, p, s] += acc
        if order < 2:
            continue
        for p in range(d):
            for p2 in range(p, d):
                for s in range(k):
                    d2y[t, p, p2, s] = d2a[p, p2, s]
        for i in range(1, q + 1):
            if t - i < 0:
                break
            for p in range(d):
                for p2 in range(p, d):
                    for s in range(k):
                        acc = 0.0
                        for u in range(r):
                            acc += d2A[i - 1, p, p2, s, u] * z[t - i, u]
                            if has_dz:
                                acc += dA[i - 1, p, s, u] * dz[t - i, p2, u] + dA[i - 1, p2, s, u] * dz[t - i, p, u]
                            if has_d2z:
                                acc += A[i - 1, s, u] * d2z[t - i, p, p2, u]
                        d2y[t, p, p2, s] += acc
        for j in range(1, qp + 1):
            for p in range(d):
                for p2 in range(p, d):
                    for s in range(k):
                        acc = 0.0
                        for u in range(k):
                            if t - j >= 0:
                                acc += (d2B[j - 1, p, p2, s, u] * y[t - j, u]
                                        + dB[j - 1, p, s, u] * dy[t - j, p2, u]
                                        + dB[j - 1, p2, s, u] * dy[t - j, p, u]
                                        + B[j - 1, s, u] * d2y[t - j, p, p2, u])
                            else:
                                acc += (d2B[j - 1, p, p2, s, u] * y0[u]
                                        + dB[j - 1, p, s, u] * dy0[p2, u]
                                        + dB[j - 1, p2, s, u] * dy0[p, u]
                                        + B[j - 1, s, u] * d2y0[p, p2, u])
                        d2y[t, p, p2, s] += acc
        for p in range(d):
            for p2 in range(p + 1, d):
                for s in range(k):
                    d2y[t, p2, p, s] = d2y[t, p, p2, s]
    return y, dy, d2y


class Jet:
    """Value of a theta-dependent array with its first and second theta-derivatives."""

    __slots__ = ("v", "d1", "d2")

    def __init__(self, v, d1, d2):
        self.v = np.asarray(v, dtype=float)
        self.d1 = np.asarray(d1, dtype=float)
        self.d2 = np.asarray(d2, dtype=float)

    @classmethod
    def linear(cls, v, d1):
        """Array that is linear (affine) in theta: zero second derivative."""
        v = np.asarray(v, dtype=float)
        d1 = np.asarray(d1, dtype=float)
        d = d1.shape[0]
        return cls(v, d1, np.zeros((d, d) + v.shape))


def kron_square(M):
    """``M (x) M`` with derivatives, for ``M`` a Jet of an (m, m) matrix linear in theta."""
    v = np.kron(M.v, M.v)
    m = M.v.shape[0]
    d = M.d1.shape[0]
    # kron index ((i, k), (j, l)) = A[i, j] B[k, l]
    d1 = (np.einsum("pij,kl->pikjl", M.d1, M.v) + np.einsum("ij,pkl->pikjl", M.v, M.d1)).reshape(d, m * m, m * m)
    cross = np.einsum("pij,qkl->pqikjl", M.d1, M.d1).reshape(d, d, m * m, m * m)
    d2 = cross + np.swapaxes(cross, 0, 1)
    d2 = d2 + (np.einsum("pqij,kl->pqikjl", M.d2, M.v) + np.einsum("ij,pqkl->pqikjl", M.v, M.d2)).reshape(d, d, m * m, m * m)
    return Jet(v, d1, d2)


def outer_square(C):
    """``vec(C C')`` (row-major) with derivatives for a Jet matrix ``C`` linear in theta."""
    v = C.v @ C.v.T
    d = C.d1.shape[0]
    m = v.shape[0]
    d1 = np.einsum("pik,jk->pij", C.d1, C.v)
    d1 = d1 + np.swapaxes(d1, 1, 2)
    cross = np.einsum("pik,qjk->pqij", C.d1, C.d1)
    d2 = cross + np.swapaxes(cross, 0, 1)
    return Jet(v.reshape(m * m), d1.reshape(d, m * m), d2.reshape(d, d, m * m))


def stationary_level(a, Bs):
    """``y0 = (I - sum B_j)^{-1} a`` with derivatives (``Bs`` a list of Jets)."""
    k = a.v.shape[0]
    d = a.d1.shape[0]
    if Bs:
        Bsum = sum(b.v for b in Bs)
        dB = sum(b.d1 for b in Bs)
        d2B = sum(b.d2 for b in Bs)
    else:
        Bsum = np.zeros((k, k))
        dB = np.zeros((d, k, k))
        d2B = np.zeros((d, d, k, k))
    S = np.eye(k) - Bsum
    y0 = np.linalg.solve(S, a.v)
    rhs1 = a.d1 + np.einsum("pij,j->pi", dB, y0)
    dy0 = np.linalg.solve(S, rhs1.T).T
    rhs2 = a.d2 + np.einsum("pqij,j->pqi", d2B, y0)
    rhs2 = rhs2 + np.einsum("pij,qj->pqi", dB, dy0) + np.einsum("qij,pj->pqi", dB, dy0)
    d2y0 = np.linalg.solve(S, rhs2.reshape(d * d, k).T).T.reshape(d, d, k)
    return Jet(y0, dy0, d2y0)


def run(a, As, Bs, y0, z, dz=None, d2z=None, order=0):
    """Evaluate the recursion; ``As``/``Bs`` are lists of Jets, ``a``/``y0`` Jets."""
    k = a.v.shape[0]
    d = a.d1.shape[0]
    n, r = z.shape
    q, qp = len(As), len(Bs)
    A = np.stack([x.v for x in As]) if q else np.zeros((0, k, r))
    B = np.stack([x.v for x in Bs]) if qp else np.zeros((0, k, k))
    dA = np.stack([x.d1 for x in As]) if q else np.zeros((0, d, k, r))
    dB = np.stack([x.d1 for x in Bs]) if qp else np.zeros((0, d, k, k))
    if order >= 2:
        d2A = np.stack([x.d2 for x in As]) if q else np.zeros((0, d, d, k, r))
        d2B = np.stack([x.d2 for x in Bs]) if qp else np.zeros((0, d, d, k, k))
        d2a, d2y0 = a.d2, y0.d2
    else:
        d2A = np.zeros((0, d, d, k, r))
        d2B = np.zeros((0, d, d, k, k))
        d2a = np.zeros((d, d, k))
        d2y0 = np.zeros((d, d, k))
    dz_ = np.zeros((0, d, r)) if dz is None or order < 1 else np.ascontiguousarray(dz, dtype=float)
    d2z_ = np.zeros((0, d, d, r)) if d2z is None or order < 2 else np.ascontiguousarray(d2z, dtype=float)
    return _recursion(
        np.ascontiguousarray(a.v), np.ascontiguousarray(A), np.ascontiguousarray(B), np.ascontiguousarray(y0.v),
        np.ascontiguousarray(z, dtype=float),
        np.ascontiguousarray(a.d1), np.ascontiguousarray(dA), np.ascontiguousarray(dB), np.ascontiguousarray(y0.d1), dz_,
        np.ascontiguousarray(d2a), np.ascontiguousarray(d2A), np.ascontiguousarray(d2B), np.ascontiguousarray(d2y0), d2z_,
        order,
    )
