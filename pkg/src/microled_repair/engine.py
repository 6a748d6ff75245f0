"""Differentiable transfer module with hand-written forward and reverse passes.

Arrays live on the integer lattice.  A grid is a 2D float array plus the
lattice coordinate of its ``[0, 0]`` element (its *origin*); donor and target
grids both sit at origin ``(0, 0)``.  Shifts are ``(a_x, a_y)`` pairs: a donor
cell at ``(m, n)`` lands on target cell ``(m + a_y, n + a_x)``.

The shift operator is cubic convolution with the Keys kernel.  At integer
offsets the kernel taps collapse to a single unit weight, so the forward pass
is an exact translation, while the derivative taps still see the neighbouring
cells and give a usable surrogate gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid import ChipArray

KEYS_A = -0.5
_TAP_OFFSETS = np.array([-1.0, 0.0, 1.0, 2.0])


class TapeError(RuntimeError):
    """The tape does not hold the forward record a backward call expects."""


# -- kernel -------------------------------------------------------------------

def kernel_eval(x, a_param: float = KEYS_A):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    inner = ((a_param + 2.0) * ax - (a_param + 3.0)) * ax * ax + 1.0
    outer = ((a_param * ax - 5.0 * a_param) * ax + 8.0 * a_param) * ax - 4.0 * a_param
    out = np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))
    return out if out.ndim else float(out)


def kernel_deriv(x, a_param: float = KEYS_A):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    inner = (3.0 * (a_param + 2.0) * ax - 2.0 * (a_param + 3.0)) * ax
    outer = (3.0 * a_param * ax - 10.0 * a_param) * ax + 8.0 * a_param
    out = np.sign(x) * np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))
    return out if out.ndim else float(out)


def _taps(frac: float):
    """Weights for offsets -1..2 and the derivative of those weights w.r.t. the shift."""
    d = _TAP_OFFSETS - frac
    return kernel_eval(d), -kernel_deriv(d)


_INT_TAPS = _taps(0.0)


def _split(a: float):
    f = math.floor(a)
    r = a - f
    if r == 0.0:
        return int(f), _INT_TAPS
    return int(f), _taps(r)


# -- rounding -----------------------------------------------------------------

def round_half_away(x: float) -> int:
    if not math.isfinite(x):
        raise ValueError(f"cannot round non-finite value {x!r}")
    mag = abs(x)
    r = math.floor(mag)
    if mag - r >= 0.5:
        r += 1
    return int(math.copysign(r, x)) if r else 0


def ste_round(v) -> np.ndarray:
    """Round each component half away from zero."""
    return np.array([round_half_away(float(c)) for c in np.ravel(v)], dtype=np.int64)


def ste_round_backward(upstream) -> np.ndarray:
    # straight-through: identity Jacobian
    return np.array(upstream, dtype=np.float64, copy=True)


@dataclass
class ShiftParam:
    """Learnable continuous shift ``v = (v_x, v_y)``; ``a`` is what the stage executes."""

    v: np.ndarray = field(default_factory=lambda: np.zeros(2))
    grad: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.v = np.array(self.v, dtype=np.float64).reshape(2)
        self.grad = np.array(self.grad, dtype=np.float64).reshape(2)

    @property
    def a(self) -> np.ndarray:
        return ste_round(self.v)


# -- tape ---------------------------------------------------------------------

class GradTape:
    """Stack of forward records; backward calls pop them in reverse order."""

    def __init__(self):
        self._records: list[tuple[str, object]] = []

    def push(self, kind: str, record) -> None:
        self._records.append((kind, record))

    def pop(self, kind: str):
        if not self._records:
            raise TapeError(f"tape is empty, expected a '{kind}' record")
        top_kind, record = self._records[-1]
        if top_kind != kind:
            raise TapeError(f"tape mismatch: expected '{kind}' record, found '{top_kind}'")
        self._records.pop()
        return record

    def clear(self) -> None:
        self._records.clear()

    def __len__(self) -> int:
        return len(self._records)


# -- lattice helpers ----------------------------------------------------------

def _overlap(origin_a, shape_a, origin_b, shape_b):
    """Slices into ``a`` and ``b`` covering their common lattice rectangle, or None."""
    r0 = max(origin_a[0], origin_b[0])
    c0 = max(origin_a[1], origin_b[1])
    r1 = min(origin_a[0] + shape_a[0], origin_b[0] + shape_b[0])
    c1 = min(origin_a[1] + shape_a[1], origin_b[1] + shape_b[1])
    if r0 >= r1 or c0 >= c1:
        return None
    sa = (slice(r0 - origin_a[0], r1 - origin_a[0]), slice(c0 - origin_a[1], c1 - origin_a[1]))
    sb = (slice(r0 - origin_b[0], r1 - origin_b[0]), slice(c0 - origin_b[1], c1 - origin_b[1]))
    return sa, sb


def embed(src, src_origin, out_origin, out_shape, fill: float) -> np.ndarray:
    """Copy ``src`` onto a new lattice window, ``fill`` elsewhere."""
    out = np.full(out_shape, float(fill))
    ov = _overlap(out_origin, out_shape, src_origin, src.shape)
    if ov is not None:
        out[ov[0]] = src[ov[1]]
    return out


def _as_grid(c, fill):
    if isinstance(c, ChipArray):
        return c.to_float(), c.oob_fill
    return np.asarray(c, dtype=np.float64), (0 if fill is None else fill)


# -- shift --------------------------------------------------------------------

@dataclass
class _ShiftRecord:
    P: np.ndarray
    src_shape: tuple
    src_origin: tuple
    pad_origin: tuple
    wy: np.ndarray
    wx: np.ndarray
    wdy: np.ndarray
    wdx: np.ndarray


def _shift(src, src_origin, fill, ax, ay, out_origin, out_shape):
    fy, (wy, wdy) = _split(ay)
    fx, (wx, wdx) = _split(ax)
    pad_origin = (out_origin[0] - fy - 2, out_origin[1] - fx - 2)
    P = embed(src, src_origin, pad_origin, (out_shape[0] + 3, out_shape[1] + 3), fill)
    out = _kernels.filter_apply(P, wy, wx)
    return out, _ShiftRecord(P, src.shape, tuple(src_origin), pad_origin, wy, wx, wdy, wdx)


def _shift_vjp(rec: _ShiftRecord, upstream):
    up = np.ascontiguousarray(upstream, dtype=np.float64)
    gy, gx = _kernels.filter_grad(rec.P, up, rec.wy, rec.wx, rec.wdy, rec.wdx)
    gP = _kernels.filter_adjoint(up, rec.wy, rec.wx)
    grad_src = np.zeros(rec.src_shape)
    ov = _overlap(rec.src_origin, rec.src_shape, rec.pad_origin, gP.shape)
    if ov is not None:
        grad_src[ov[0]] = gP[ov[1]]
    return grad_src, float(gx), float(gy)


def shift_forward(c, a, sample_dims=None, *, origin=(0, 0), sample_origin=(0, 0),
                  fill=None, tape: GradTape | None = None) -> np.ndarray:
    """Translate grid ``c`` by ``a = (a_x, a_y)`` and sample on a lattice window.

    ``D[i, j] = sum_{m,n} c[m, n] k(i - a_y - m) k(j - a_x - n)`` where cells
    outside ``c`` read as its out-of-bounds fill.  ``sample_dims`` is
    ``(width, height)`` and defaults to ``c``'s own extent.  Integer ``a``
    gives an exact translation; real ``a`` gives the smooth surrogate.
    """
    src, fill = _as_grid(c, fill)
    if sample_dims is None:
        out_shape = src.shape
    else:
        out_shape = (int(sample_dims[1]), int(sample_dims[0]))
    out, rec = _shift(src, tuple(origin), fill, float(a[0]), float(a[1]), tuple(sample_origin), out_shape)
    if tape is not None:
        tape.push("shift", rec)
    return out


def shift_backward(tape: GradTape, upstream):
    """Reverse pass of the latest :func:`shift_forward`: ``(grad_c, (grad_a_x, grad_a_y))``."""
    rec = tape.pop("shift")
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != (rec.P.shape[0] - 3, rec.P.shape[1] - 3):
        raise TapeError(f"upstream shape {up.shape} does not match recorded output shape")
    grad_c, gx, gy = _shift_vjp(rec, up)
    return grad_c, np.array([gx, gy])


# -- transfer -----------------------------------------------------------------

def transfer_forward(d1, c2, tape: GradTape | None = None):
    """Move shifted donor mass onto empty target sites.

    ``D1' = D1 - D1 (1 - C2)`` and ``C2' = C2 + D1 (1 - C2)``.
    """
    d1 = np.asarray(d1, dtype=np.float64)
    c2 = c2.to_float() if isinstance(c2, ChipArray) else np.asarray(c2, dtype=np.float64)
    if d1.shape != c2.shape:
        raise ValueError(f"transfer grids must share dims, got {d1.shape} and {c2.shape}")
    moved = d1 * (1.0 - c2)
    if tape is not None:
        tape.push("transfer", (d1, c2))
    return d1 - moved, c2 + moved


def transfer_backward(tape: GradTape, upstream_d1p, upstream_c2p):
    d1, c2 = tape.pop("transfer")
    up_d = np.asarray(upstream_d1p, dtype=np.float64)
    up_c = np.asarray(upstream_c2p, dtype=np.float64)
    if up_d.shape != d1.shape or up_c.shape != d1.shape:
        raise TapeError("upstream shapes do not match the recorded transfer")
    grad_d1 = up_d * c2 + up_c * (1.0 - c2)
    grad_c2 = up_d * d1 + up_c * (1.0 - d1)
    return grad_d1, grad_c2


# -- full module --------------------------------------------------------------

@dataclass
class _ModuleRecord:
    target_slice: tuple | None
    canvas_slice: tuple | None
    canvas_shape: tuple
    rounding: bool


def transfer_module_forward(c1, c2, p, tape: GradTape | None = None, rounding: bool = True):
    """One platform alignment: round, shift donor, transfer, shift donor back.

    ``p`` is a :class:`ShiftParam` or a ``(v_x, v_y)`` pair.  With
    ``rounding=False`` the raw continuous ``v`` drives the shift, which is the
    smooth surrogate used for gradient checks and local landscapes.

    The shifted donor is materialised on a window covering its whole kernel
    support (not just the target extent), so chips that miss the target are
    carried back to the donor intact.
    """
    v = p.v if isinstance(p, ShiftParam) else np.asarray(p, dtype=np.float64)
    a = ste_round(v).astype(np.float64) if rounding else np.asarray(v, dtype=np.float64)
    ax, ay = float(a[0]), float(a[1])
    src1, _ = _as_grid(c1, 0)
    tgt, _ = _as_grid(c2, 1)

    h1, w1 = src1.shape
    canvas_origin = (math.floor(ay) - 1, math.floor(ax) - 1)
    canvas_shape = (h1 + 3, w1 + 3)
    d1 = shift_forward(src1, (ax, ay), (canvas_shape[1], canvas_shape[0]),
                       sample_origin=canvas_origin, fill=0, tape=tape)

    ov = _overlap((0, 0), tgt.shape, canvas_origin, canvas_shape)
    c2_canvas = np.ones(canvas_shape)
    if ov is not None:
        c2_canvas[ov[1]] = tgt[ov[0]]
    d1p, c2p_canvas = transfer_forward(d1, c2_canvas, tape=tape)
    c2_next = tgt.copy()
    if ov is not None:
        c2_next[ov[0]] = c2p_canvas[ov[1]]

    c1_next = shift_forward(d1p, (-ax, -ay), (w1, h1), origin=canvas_origin, fill=0, tape=tape)
    if tape is not None:
        tape.push("module", _ModuleRecord(
            None if ov is None else ov[0], None if ov is None else ov[1], canvas_shape, rounding))
    return c1_next, c2_next


def transfer_module_backward(tape: GradTape, upstream_c1, upstream_c2):
    """Returns ``(grad_c1, grad_c2, grad_v)`` for the latest module on the tape."""
    rec: _ModuleRecord = tape.pop("module")
    up_c1 = np.asarray(upstream_c1, dtype=np.float64)
    up_c2 = np.asarray(upstream_c2, dtype=np.float64)

    g_d1p, g_back = shift_backward(tape, up_c1)
    g_c2p_canvas = np.zeros(rec.canvas_shape)
    if rec.target_slice is not None:
        g_c2p_canvas[rec.canvas_slice] = up_c2[rec.target_slice]
    g_d1, g_c2_canvas = transfer_backward(tape, g_d1p, g_c2p_canvas)
    grad_c2 = up_c2.copy()
    if rec.target_slice is not None:
        grad_c2[rec.target_slice] = g_c2_canvas[rec.canvas_slice]
    grad_c1, g_fwd = shift_backward(tape, g_d1)

    # the shift-back leg runs at -a
    grad_a = g_fwd - g_back
    grad_v = ste_round_backward(grad_a) if rec.rounding else grad_a
    return grad_c1, grad_c2, grad_v
