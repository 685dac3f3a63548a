"""Slow, obviously-correct reference implementations used only by the tests."""
import math

import numpy as np


def conv2d_naive(x, w, b, padding="same"):
    n, h, wd, cin = x.shape
    k = w.shape[0]
    cout = w.shape[3]
    p = k // 2 if padding == "same" else 0
    xp = np.zeros((n, h + 2 * p, wd + 2 * p, cin), dtype=np.float64)
    xp[:, p:p + h, p:p + wd, :] = x
    oh, ow = h + 2 * p - k + 1, wd + 2 * p - k + 1
    out = np.zeros((n, oh, ow, cout))
    for s in range(n):
        for i in range(oh):
            for j in range(ow):
                for co in range(cout):
                    acc = float(b[co])
                    for di in range(k):
                        for dj in range(k):
                            for ci in range(cin):
                                acc += xp[s, i + di, j + dj, ci] * w[di, dj, ci, co]
                    out[s, i, j, co] = acc
    return out


def maxpool_naive(x):
    n, h, w, c = x.shape
    out = np.zeros((n, h // 2, w // 2, c))
    for s in range(n):
        for i in range(h // 2):
            for j in range(w // 2):
                for ch in range(c):
                    out[s, i, j, ch] = max(x[s, 2 * i + a, 2 * j + bb, ch] for a in (0, 1) for bb in (0, 1))
    return out


def dense_naive(x, w, b):
    n, d = x.shape
    u = w.shape[1]
    out = np.zeros((n, u))
    for s in range(n):
        for k in range(u):
            acc = float(b[k])
            for i in range(d):
                acc += x[s, i] * w[i, k]
            out[s, k] = acc
    return out


def adam_script(theta, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-7):
    """Adam recurrences written out step by step for a scalar parameter."""
    m = v = 0.0
    path = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        path.append(theta)
    return path


def supersampled_coverage(points, width, shape, factor=16):
    """Fraction of each pixel's area inside the stroked polyline, by point sampling.

    Pixel (r, c) covers ``[c-0.5, c+0.5] x [r-0.5, r+0.5]``. The stroke is the
    union of one rectangle per segment, lengthened by ``width/2`` at the two
    ends of the polyline (square caps), and a disc at every interior vertex
    (round joins).
    """
    h, w = shape
    r = width / 2
    offs = (np.arange(factor) + 0.5) / factor - 0.5
    ys = (np.arange(h)[:, None] + offs[None, :]).ravel()
    xs = (np.arange(w)[:, None] + offs[None, :]).ravel()
    gx, gy = np.meshgrid(xs, ys)
    inside = np.zeros(gx.shape, dtype=bool)
    pts = np.asarray(points, dtype=np.float64)
    last = len(pts) - 2
    for i, ((x0, y0), (x1, y1)) in enumerate(zip(pts[:-1], pts[1:])):
        length = math.hypot(x1 - x0, y1 - y0)
        if length == 0:
            continue
        cx, cy = (x1 - x0) / length, (y1 - y0) / length
        start = -r if i == 0 else 0.0
        stop = length + (r if i == last else 0.0)
        s = (gx - x0) * cx + (gy - y0) * cy
        n = (gy - y0) * cx - (gx - x0) * cy
        inside |= (s >= start) & (s <= stop) & (np.abs(n) <= r)
    for x, y in pts[1:-1]:
        inside |= (gx - x) ** 2 + (gy - y) ** 2 <= r * r
    return inside.reshape(h, factor, w, factor).mean(axis=(1, 3))


def mann_whitney_z2(a, b):
    """Squared standardized Mann-Whitney U by brute-force pair counting (no ties)."""
    u = sum(1 for x in a for y in b if x > y)
    n1, n2 = len(a), len(b)
    mu = n1 * n2 / 2
    sigma2 = n1 * n2 * (n1 + n2 + 1) / 12
    return (u - mu) ** 2 / sigma2


def hand_ranks(values):
    """Midranks by counting: rank = #smaller + (#equal + 1) / 2."""
    return [sum(1 for o in values if o < v) + (sum(1 for o in values if o == v) + 1) / 2 for v in values]
