"""Independent reference implementations used as test oracles.

Nothing here calls into the tap/padding machinery of ``microled_repair``;
the shift is built from dense kernel matrices and the executor loops per cell.
"""

import math

import numpy as np
from numpy.polynomial import Polynomial

A = -0.5
# Keys kernel pieces on |x| in [0, 1] and [1, 2], written out as coefficients
INNER = Polynomial([1.0, 0.0, -(A + 3.0), A + 2.0])
OUTER = Polynomial([-4.0 * A, 8.0 * A, -5.0 * A, A])


def keys(x: float) -> float:
    ax = abs(x)
    if ax <= 1.0:
        return float(INNER(ax))
    if ax < 2.0:
        return float(OUTER(ax))
    return 0.0


def keys_deriv(x: float) -> float:
    ax = abs(x)
    s = math.copysign(1.0, x) if x != 0 else 0.0
    if ax <= 1.0:
        return s * float(INNER.deriv()(ax))
    if ax < 2.0:
        return s * float(OUTER.deriv()(ax))
    return 0.0


def kmatrix(out_idx, in_idx, shift):
    """``K[o, n] = k(out_idx[o] - shift - in_idx[n])``."""
    return np.array([[keys(o - shift - n) for n in in_idx] for o in out_idx])


def dense_shift(c, ax, ay, out_rows, out_cols, in_rows=None, in_cols=None):
    """Brute-force shift of a zero-filled grid via dense kernel matrices."""
    c = np.asarray(c, dtype=np.float64)
    in_rows = np.arange(c.shape[0]) if in_rows is None else in_rows
    in_cols = np.arange(c.shape[1]) if in_cols is None else in_cols
    return kmatrix(out_rows, in_rows, ay) @ c @ kmatrix(out_cols, in_cols, ax).T


def translate(c, fill, sx, sy, out_shape):
    """Direct index translation: ``out[i, j] = c[i - sy, j - sx]`` or ``fill``."""
    c = np.asarray(c)
    h, w = c.shape
    out = np.full(out_shape, float(fill))
    for i in range(out_shape[0]):
        for j in range(out_shape[1]):
            m, n = i - sy, j - sx
            if 0 <= m < h and 0 <= n < w:
                out[i, j] = c[m, n]
    return out


def ref_module(c1, c2, v):
    """Continuous transfer module on a generous lattice window."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    ax, ay = float(v[0]), float(v[1])
    h1, w1 = c1.shape
    h2, w2 = c2.shape
    rows = np.arange(math.floor(ay) - 3, h1 + math.ceil(ay) + 3)
    cols = np.arange(math.floor(ax) - 3, w1 + math.ceil(ax) + 3)
    d1 = dense_shift(c1, ax, ay, rows, cols)
    c2w = np.ones((rows.size, cols.size))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            if 0 <= i < h2 and 0 <= j < w2:
                c2w[a, b] = c2[i, j]
    moved = d1 * (1.0 - c2w)
    d1p = d1 - moved
    c2_next = c2.copy()
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            if 0 <= i < h2 and 0 <= j < w2:
                c2_next[i, j] += moved[a, b]
    c1_next = dense_shift(d1p, -ax, -ay, np.arange(h1), np.arange(w1), rows, cols)
    return c1_next, c2_next


def ref_loss(c1, c2, V, lambda1=0.5, T1=None):
    """Continuous L1 of a stacked pipeline."""
    T = len(V)
    T1 = T if T1 is None else T1
    hist = [np.asarray(c2, dtype=np.float64)]
    x1 = c1
    for v in V:
        x1, x2 = ref_module(x1, hist[-1], v)
        hist.append(x2)
    early, final = hist[T1].sum(), hist[T].sum()
    return -(early + lambda1 * (final - early))


def central_diff(f, x, h):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def brute_execute(c1, c2, shifts):
    """Per-cell swap rule."""
    d = np.array(c1, dtype=np.int64)
    t = np.array(c2, dtype=np.int64)
    counts = []
    for sx, sy in shifts:
        n = 0
        for i in range(t.shape[0]):
            for j in range(t.shape[1]):
                m, q = i - sy, j - sx
                if 0 <= m < d.shape[0] and 0 <= q < d.shape[1] and d[m, q] == 1 and t[i, j] == 0:
                    d[m, q] = 0
                    t[i, j] = 1
                    n += 1
        counts.append(n)
    return d, t, counts


def brute_repairing_shifts(c1, c2):
    """Every integer shift that fills all target holes in one step."""
    h1, w1 = np.shape(c1)
    h2, w2 = np.shape(c2)
    span = max(h1, w1, h2, w2)
    found = []
    for sy in range(-span, span + 1):
        for sx in range(-span, span + 1):
            _, t, _ = brute_execute(c1, c2, [(sx, sy)])
            if t.min() == 1:
                found.append((sx, sy))
    return found
