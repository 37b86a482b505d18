"""Pure-numpy kernel backend.

Same call contracts as the compiled backend in ``_ckernels``: batched 1D
convolution (cross-correlation convention) and pair max-pooling, forward and
backward. Convolutions gather the K taps with contiguous per-tap copies and
run as a single im2col GEMM, so the heavy lifting stays in BLAS.
"""

import numpy as np

NAME = "python"


def _pad(x, pad_left, pad_right):
    if pad_left or pad_right:
        B, L, Ci = x.shape
        xp = np.zeros((B, L + pad_left + pad_right, Ci), dtype=x.dtype)
        xp[:, pad_left:pad_left + L] = x
        return xp
    return x


def _columns(xp, K, dilation, Lout):
    """(B, Lout, K*Ci) tap matrix, one contiguous block copy per tap."""
    B, _, Ci = xp.shape
    cols = np.empty((B, Lout, K, Ci), dtype=xp.dtype)
    for k in range(K):
        off = k * dilation
        cols[:, :, k] = xp[:, off:off + Lout]
    return cols.reshape(B, Lout, K * Ci)


def conv1d_fwd(x, w, dilation, pad_left, pad_right):
    """x: (B, L, Cin), w: (K, Cin, Cout) -> (B, Lout, Cout)."""
    B, L, Ci = x.shape
    K, _, Co = w.shape
    Lout = L + pad_left + pad_right - (K - 1) * dilation
    xp = _pad(x, pad_left, pad_right)
    cols = _columns(xp, K, dilation, Lout)
    y = cols.reshape(B * Lout, K * Ci) @ w.reshape(K * Ci, Co)
    return y.reshape(B, Lout, Co)


def conv1d_bwd(x, w, gy, dilation, pad_left, pad_right):
    """Gradients w.r.t. input and kernels. Returns (gx, gw)."""
    B, L, Ci = x.shape
    K, _, Co = w.shape
    Lout = gy.shape[1]
    span = (K - 1) * dilation
    xp = _pad(x, pad_left, pad_right)
    cols = _columns(xp, K, dilation, Lout).reshape(B * Lout, K * Ci)
    gw = (cols.T @ gy.reshape(B * Lout, Co)).reshape(K, Ci, Co)
    # input gradient is the correlation of gy with the tap-reversed,
    # channel-transposed kernel (a "full" correlation, trimmed by the pads)
    wflip = np.ascontiguousarray(w[::-1].transpose(0, 2, 1))
    gx = conv1d_fwd(gy, wflip, dilation, span - pad_left, span - pad_right)
    return gx, gw


def maxpool2_fwd(x):
    """x: (B, L, C) with L even -> (y: (B, L/2, C), arg: int8 0/1 per pair)."""
    B, L, C = x.shape
    a0 = x[:, 0::2]
    a1 = x[:, 1::2]
    # strict comparison: the first element of each pair wins ties
    take1 = a1 > a0
    y = np.where(take1, a1, a0)
    return y, take1.astype(np.int8)


def maxpool2_bwd(gy, arg):
    B, Lh, C = gy.shape
    gx = np.zeros((B, Lh * 2, C), dtype=gy.dtype)
    take1 = arg.astype(bool)
    gx[:, 0::2] = np.where(take1, 0, gy)
    gx[:, 1::2] = np.where(take1, gy, 0)
    return gx
