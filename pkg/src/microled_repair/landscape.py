"""Loss landscapes around trained shift blocks and per-block convergence traces."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import ste_round, transfer_module_forward
from .grid import ChipArray
from .planner import TraceLog, simulate

TRAJECTORY_EPOCHS = 100


@dataclass
class LandscapeGrid:
    """Loss over a 2D shift sweep of one block; ``loss[k, l]`` is at ``(sx[l], sy[k])``."""

    block: int
    kind: str
    sx: np.ndarray
    sy: np.ndarray
    loss: np.ndarray
    v_final: np.ndarray
    a_final: np.ndarray
    trajectory: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)

    def loss_at(self, sx: float, sy: float) -> float:
        l = int(np.argmin(np.abs(self.sx - sx)))
        k = int(np.argmin(np.abs(self.sy - sy)))
        if not (math.isclose(self.sx[l], sx, abs_tol=1e-9) and math.isclose(self.sy[k], sy, abs_tol=1e-9)):
            raise KeyError(f"({sx}, {sy}) is not a sweep point")
        return float(self.loss[k, l])

    def rows(self):
        for k, y in enumerate(self.sy):
            for l, x in enumerate(self.sx):
                yield x, y, self.loss[k, l]

    def write_csv(self, path) -> None:
        integral = self.kind == "global"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sx", "sy", "loss"])
            for x, y, v in self.rows():
                if integral:
                    w.writerow([int(x), int(y), repr(float(v))])
                else:
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])

    def markers(self) -> dict:
        out = {
            "block": self.block,
            "v_final": [float(c) for c in self.v_final],
            "a_final": [int(c) for c in self.a_final],
            "trajectory": [] if self.trajectory is None else [[float(x), float(y)] for x, y in self.trajectory],
        }
        if self.flags:
            out["flags"] = list(self.flags)
        return out

    def write_markers(self, path) -> None:
        Path(path).write_text(json.dumps(self.markers(), indent=2) + "\n")


def _bool(c):
    return (c.cells if isinstance(c, ChipArray) else np.asarray(c)).astype(bool)


def _shifts(params) -> list[tuple[int, int]]:
    return [tuple(int(s) for s in ste_round(v)) for v in np.asarray(params, dtype=np.float64).reshape(-1, 2)]


def _check_block(params, t):
    T = len(params)
    if not 1 <= t <= T:
        raise ValueError(f"block index must lie in [1, {T}], got {t}")


def sweep_global(c1, c2, params, t: int, shift_range: tuple[int, int] | None = None) -> LandscapeGrid:
    """Residual defect count of the integer plan as block ``t`` sweeps integer shifts.

    All other blocks stay at their trained (rounded) shifts.  The default and
    maximum range is ``+-(max extent - 1)`` on both axes.
    """
    V = np.asarray(params, dtype=np.float64).reshape(-1, 2)
    _check_block(V, t)
    donor, target = _bool(c1), _bool(c2)
    limit = max(donor.shape + target.shape) - 1
    lo, hi = (-limit, limit) if shift_range is None else (int(shift_range[0]), int(shift_range[1]))
    flags = []
    if lo < -limit or hi > limit:
        warnings.warn(f"sweep range [{lo}, {hi}] clamped to [{-limit}, {limit}]", stacklevel=2)
        lo, hi = max(lo, -limit), min(hi, limit)
        flags.append("range_clamped")
    shifts = _shifts(V)
    simulate(donor, target, shifts[:t - 1])
    rest = shifts[t:]
    axis = np.arange(lo, hi + 1)
    loss = np.empty((axis.size, axis.size))
    for k, sy in enumerate(axis):
        for l, sx in enumerate(axis):
            d, g = donor.copy(), target.copy()
            simulate(d, g, [(sx, sy)] + rest)
            loss[k, l] = g.size - np.count_nonzero(g)
    return LandscapeGrid(t, "global", axis, axis.copy(), loss, V[t - 1].copy(), ste_round(V[t - 1]), flags=flags)


def _surrogate_axis(center: float, window: float, subdivisions: int) -> np.ndarray:
    # points are k / subdivisions so integers land exactly on the lattice
    k0 = math.ceil((center - window) * subdivisions - 1e-9)
    k1 = math.floor((center + window) * subdivisions + 1e-9)
    return np.arange(k0, k1 + 1) / subdivisions


def surrogate_loss(x1: np.ndarray, x2: np.ndarray, shift, rest) -> float:
    """Residual of the continuous pipeline: block at real ``shift``, then integer ``rest``."""
    x1, x2 = transfer_module_forward(x1, x2, shift, rounding=False)
    for s in rest:
        x1, x2 = transfer_module_forward(x1, x2, s, rounding=False)
    return float(x2.size - x2.sum())


def sweep_local(c1, c2, params, t: int, window: float = 3.0, subdivisions: int = 10,
                trace: TraceLog | None = None) -> LandscapeGrid:
    """Continuous surrogate loss on a fine grid around block ``t``'s trained ``v``.

    Block ``t`` runs unrounded; the other blocks keep their rounded shifts.
    Grid step is ``1 / subdivisions`` cells and includes every integer point in
    the window, where the surrogate equals the integer-plan residual.  The
    first 100 epochs of the block's trajectory are attached from ``trace``.
    """
    V = np.asarray(params, dtype=np.float64).reshape(-1, 2)
    _check_block(V, t)
    if subdivisions < 1 or window <= 0:
        raise ValueError("need subdivisions >= 1 and window > 0")
    donor, target = _bool(c1), _bool(c2)
    shifts = _shifts(V)
    simulate(donor, target, shifts[:t - 1])
    x1, x2 = donor.astype(np.float64), target.astype(np.float64)
    rest = [np.array(s, dtype=np.float64) for s in shifts[t:]]
    v = V[t - 1]
    xs = _surrogate_axis(v[0], window, subdivisions)
    ys = _surrogate_axis(v[1], window, subdivisions)
    loss = np.empty((ys.size, xs.size))
    for k, y in enumerate(ys):
        for l, x in enumerate(xs):
            loss[k, l] = surrogate_loss(x1, x2, (x, y), rest)

    flags = []
    trajectory = None
    if trace is None or len(trace) == 0:
        flags.append("no_trace")
    else:
        trajectory = np.array([step[t - 1] for step in trace.v[:TRAJECTORY_EPOCHS]])
    return LandscapeGrid(t, "local", xs, ys, loss, v.copy(), ste_round(v), trajectory, flags)


@dataclass
class GradTrace:
    """Per-epoch Euclidean norms; columns of ``shift_norm``/``grad_norm`` are blocks."""

    epoch: np.ndarray
    shift_norm: np.ndarray
    grad_norm: np.ndarray

    @property
    def blocks(self) -> int:
        return self.shift_norm.shape[1]

    def series(self, t: int) -> np.ndarray:
        """``(epoch, shift_norm, grad_norm)`` rows for block ``t`` (1-based)."""
        return np.column_stack([self.epoch, self.shift_norm[:, t - 1], self.grad_norm[:, t - 1]])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "block", "shift_norm", "grad_norm"])
            for t in range(1, self.blocks + 1):
                for e, s, g in self.series(t):
                    w.writerow([int(e), t, repr(float(s)), repr(float(g))])


def grad_trace(trace: TraceLog) -> GradTrace:
    if len(trace) == 0:
        raise ValueError("trace is empty")
    shift = np.array([np.linalg.norm(v, axis=1) for v in trace.v])
    grad = np.array(trace.grad_norm)
    return GradTrace(np.arange(len(trace)), shift, grad)
