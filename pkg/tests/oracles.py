"""Slow, obviously-correct reference implementations used only by the tests."""
import numpy as np


def conv3d_direct(x, w, b, stride, padding):
    """Nested-loop cross-correlation over (N, C, T, H, W)."""
    n, c, t, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.zeros((n, c, t + 2 * pt, h + 2 * ph, wd + 2 * pw))
    xp[:, :, pt:pt + t, ph:ph + h, pw:pw + wd] = x
    to = (t + 2 * pt - kt) // st + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, o, to, ho, wo))
    for i in range(n):
        for f in range(o):
            for a in range(to):
                for y in range(ho):
                    for z in range(wo):
                        acc = 0.0
                        for ch in range(c):
                            for p in range(kt):
                                for q in range(kh):
                                    for r in range(kw):
                                        acc += xp[i, ch, a * st + p, y * sh + q, z * sw + r] * w[f, ch, p, q, r]
                        out[i, f, a, y, z] = acc + (b[f] if b is not None else 0.0)
    return out


def max_pool_direct(x, kernel, stride, padding):
    n, c, t, h, w = x.shape
    xp = np.full((n, c, t + 2 * padding[0], h + 2 * padding[1], w + 2 * padding[2]), -np.inf)
    xp[:, :, padding[0]:padding[0] + t, padding[1]:padding[1] + h, padding[2]:padding[2] + w] = x
    ext = [(xp.shape[2 + i] - kernel[i]) // stride[i] + 1 for i in range(3)]
    out = np.empty((n, c, *ext))
    for idx in np.ndindex(n, c, *ext):
        i, ch, a, y, z = idx
        win = xp[i, ch, a * stride[0]:a * stride[0] + kernel[0],
                 y * stride[1]:y * stride[1] + kernel[1],
                 z * stride[2]:z * stride[2] + kernel[2]]
        out[idx] = win.max()
    return out


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f`` at every coordinate of ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def bilinear_1d(src, n_out):
    """Half-pixel-center linear resampling of a 1D signal, edges clamped."""
    n_in = len(src)
    out = np.empty(n_out)
    for j in range(n_out):
        pos = (j + 0.5) * n_in / n_out - 0.5
        pos = min(max(pos, 0.0), n_in - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, n_in - 1)
        frac = pos - lo
        out[j] = src[lo] * (1 - frac) + src[hi] * frac
    return out


def conv_param_count(cin, cout, k):
    return cin * cout * int(np.prod(k))
