"""Pure NumPy implementations of the hot convolution kernels.

Fallback backend used when the compiled extension is unavailable. Both
backends expose the same two functions and must agree to machine precision
(see tests/test_kernels_backends.py).
"""
import numpy as np


def conv2d_same(f, b):
    """Multi-channel spatial correlation with "same" zero padding.

    f: (c_out, c_in, kh, kw), b: (c_in, h, w) -> (c_out, h, w) where
    out[o, y, x] = sum_{c,u,v} b[c, y+u-(kh-1)/2, x+v-(kw-1)/2] * f[o, c, u, v]
    with b zero-extended outside its domain.
    """
    c_out, c_in, kh, kw = f.shape
    _, h, w = b.shape
    padded = np.zeros((c_in, h + kh - 1, w + kw - 1))
    padded[:, (kh - 1) // 2 : (kh - 1) // 2 + h, (kw - 1) // 2 : (kw - 1) // 2 + w] = b
    out = np.zeros((c_out, h, w))
    for u in range(kh):
        for v in range(kw):
            # shifted view contracted against the (c_out, c_in) tap matrix
            out += np.einsum("chw,oc->ohw", padded[:, u : u + h, v : v + w], f[:, :, u, v])
    return out


def conv2d_compose(f2, f1):
    """Serial composition of two filters: full spatial convolution of the
    kernels contracted over the middle channel axis.

    f1: (c_mid, c_in, k1h, k1w) applied first, f2: (c_out, c_mid, k2h, k2w)
    applied second -> (c_out, c_in, k1h+k2h-1, k1w+k2w-1).
    """
    c_out, c_mid, k2h, k2w = f2.shape
    _, c_in, k1h, k1w = f1.shape
    out = np.zeros((c_out, c_in, k1h + k2h - 1, k1w + k2w - 1))
    for vy in range(k2h):
        for vx in range(k2w):
            out[:, :, vy : vy + k1h, vx : vx + k1w] += np.tensordot(
                f2[:, :, vy, vx], f1, axes=([1], [0])
            )
    return out
