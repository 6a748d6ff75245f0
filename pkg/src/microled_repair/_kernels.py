"""Hot 4-tap separable filter kernels behind the shift operator.

Every kernel works on a source block ``P`` padded by 3 rows/cols so that

    out[i, j] = sum_p sum_q wy[p] * wx[q] * P[i + 3 - p, j + 3 - q]

Two implementations exist: numba ``@njit`` loops and a pure-numpy slicing
path.  ``MICROLED_REPAIR_BACKEND=numpy`` (or ``numba``) picks one at import;
:func:`set_backend` switches at runtime.  Both evaluate the same separable
sums in the same order, skipping zero taps, so integer shifts stay exact.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


# -- numpy path ---------------------------------------------------------------

def _np_rows(P, wy, h):
    tmp = np.zeros((h, P.shape[1]))
    for p in range(4):
        if wy[p] != 0.0:
            tmp += wy[p] * P[3 - p:3 - p + h, :]
    return tmp


def _np_cols(tmp, wx, w):
    out = np.zeros((tmp.shape[0], w))
    for q in range(4):
        if wx[q] != 0.0:
            out += wx[q] * tmp[:, 3 - q:3 - q + w]
    return out


def np_filter_apply(P, wy, wx):
    h, w = P.shape[0] - 3, P.shape[1] - 3
    return _np_cols(_np_rows(P, wy, h), wx, w)


def np_filter_grad(P, up, wy, wx, wdy, wdx):
    h, w = up.shape
    gy = float(np.sum(up * _np_cols(_np_rows(P, wdy, h), wx, w)))
    gx = float(np.sum(up * _np_cols(_np_rows(P, wy, h), wdx, w)))
    return gy, gx


def np_filter_adjoint(up, wy, wx):
    h, w = up.shape
    tmp = np.zeros((h, w + 3))
    for q in range(4):
        if wx[q] != 0.0:
            tmp[:, 3 - q:3 - q + w] += wx[q] * up
    gP = np.zeros((h + 3, w + 3))
    for p in range(4):
        if wy[p] != 0.0:
            gP[3 - p:3 - p + h, :] += wy[p] * tmp
    return gP


# -- numba path ---------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_rows(P, wy, h):
        ncol = P.shape[1]
        tmp = np.zeros((h, ncol))
        for p in range(4):
            c = wy[p]
            if c != 0.0:
                off = 3 - p
                for i in range(h):
                    for j in range(ncol):
                        tmp[i, j] += c * P[i + off, j]
        return tmp

    @numba.njit(cache=True)
    def _nb_cols(tmp, wx, w):
        h = tmp.shape[0]
        out = np.zeros((h, w))
        for q in range(4):
            c = wx[q]
            if c != 0.0:
                off = 3 - q
                for i in range(h):
                    for j in range(w):
                        out[i, j] += c * tmp[i, j + off]
        return out

    @numba.njit(cache=True)
    def nb_filter_apply(P, wy, wx):
        h = P.shape[0] - 3
        w = P.shape[1] - 3
        return _nb_cols(_nb_rows(P, wy, h), wx, w)

    @numba.njit(cache=True)
    def _nb_dot(a, b):
        s = 0.0
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                s += a[i, j] * b[i, j]
        return s

    @numba.njit(cache=True)
    def nb_filter_grad(P, up, wy, wx, wdy, wdx):
        h = up.shape[0]
        w = up.shape[1]
        gy = _nb_dot(up, _nb_cols(_nb_rows(P, wdy, h), wx, w))
        gx = _nb_dot(up, _nb_cols(_nb_rows(P, wy, h), wdx, w))
        return gy, gx

    @numba.njit(cache=True)
    def nb_filter_adjoint(up, wy, wx):
        h = up.shape[0]
        w = up.shape[1]
        tmp = np.zeros((h, w + 3))
        for q in range(4):
            c = wx[q]
            if c != 0.0:
                off = 3 - q
                for i in range(h):
                    for j in range(w):
                        tmp[i, j + off] += c * up[i, j]
        gP = np.zeros((h + 3, w + 3))
        for p in range(4):
            c = wy[p]
            if c != 0.0:
                off = 3 - p
                for i in range(h):
                    for j in range(w + 3):
                        gP[i + off, j] += c * tmp[i, j]
        return gP


_BACKENDS = {"numpy": (np_filter_apply, np_filter_grad, np_filter_adjoint)}
if HAVE_NUMBA:
    _BACKENDS["numba"] = (nb_filter_apply, nb_filter_grad, nb_filter_adjoint)

filter_apply = filter_grad = filter_adjoint = None
backend = ""


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    global filter_apply, filter_grad, filter_adjoint, backend
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(_BACKENDS)}")
    previous = backend
    filter_apply, filter_grad, filter_adjoint = _BACKENDS[name]
    backend = name
    return previous


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


set_backend(os.environ.get("MICROLED_REPAIR_BACKEND", "numba" if HAVE_NUMBA else "numpy"))
