import numpy as np
from scipy.signal import fftconvolve

_DIRECT_MAX_LAGS = 64


def lagged_sum(z, coef):
    """``out[..., t] = sum_{j=1}^{min(J, t)} coef[..., j-1] * z[..., t-j]`` (0-based ``t``).

    Leading axes of ``z`` and ``coef`` broadcast against each other.
    """
    z = np.asarray(z, dtype=float)
    coef = np.asarray(coef, dtype=float)
    n = z.shape[-1]
    lead = np.broadcast_shapes(z.shape[:-1], coef.shape[:-1])
    J = min(coef.shape[-1], n - 1)
    out = np.zeros(lead + (n,))
    if J <= 0:
        return out
    coef = coef[..., :J]
    if J <= _DIRECT_MAX_LAGS:
        for j in range(1, J + 1):
            out[..., j:] += coef[..., j - 1 : j] * z[..., : n - j]
        return out
    nd = len(lead) + 1
    zz = z.reshape((1,) * (nd - z.ndim) + z.shape)
    cc = coef.reshape((1,) * (nd - coef.ndim) + coef.shape)
    conv = fftconvolve(zz, cc, axes=-1)
    out[..., 1:] = conv[..., : n - 1]
    return out


def shifted(X, j):
    """Rows of ``X`` delayed by ``j`` steps with zeros for the pre-sample."""
    out = np.zeros_like(X)
    if j < X.shape[0]:
        out[j:] = X[: X.shape[0] - j]
    return out
