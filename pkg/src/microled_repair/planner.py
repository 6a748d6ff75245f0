"""Stacked repair model, losses, Adam, the adaptive-T planning loop and the integer executor."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .engine import (
    GradTape,
    ShiftParam,
    ste_round,
    transfer_module_backward,
    transfer_module_forward,
)
from .grid import ChipArray, defect_count

log = logging.getLogger(__name__)

MAX_ITER_GUARD = 1000


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class PlanConfig:
    T_max: int = 100
    N_iter: int = 300
    eps: float = 1e-6
    T_start: int = 3
    T1: int | None = None  # None means T1 = T
    lambda1: float = 0.5
    lambda2: float = 0.0
    lr: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    early_stop: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.T_start < 1:
            problems.append(f"T_start must be >= 1, got {self.T_start}")
        if self.T_max < self.T_start:
            problems.append(f"T_max ({self.T_max}) must be >= T_start ({self.T_start})")
        if not 1 <= self.N_iter <= MAX_ITER_GUARD:
            problems.append(f"N_iter must lie in [1, {MAX_ITER_GUARD}], got {self.N_iter}")
        if self.T1 is not None and self.T1 < 1:
            problems.append(f"T1 must be >= 1, got {self.T1}")
        if not 0.0 <= self.lambda1 < 1.0:
            problems.append(f"lambda1 must lie in [0, 1), got {self.lambda1}")
        if self.lambda2 < 0.0:
            problems.append(f"lambda2 must be >= 0, got {self.lambda2}")
        if not self.lr > 0.0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            problems.append("Adam betas must lie in [0, 1)")
        if not self.eps_adam > 0.0:
            problems.append(f"eps_adam must be > 0, got {self.eps_adam}")
        if problems:
            raise ValueError("; ".join(problems))

    def horizon(self, T: int) -> int:
        """Early-completion horizon T1 for a model with T modules."""
        return T if self.T1 is None else min(self.T1, T)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PlanConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RepairPlan:
    shifts: list[tuple[int, int]]
    per_step_transfers: list[int]
    residual_defects: int
    effective_steps: int
    raw_T: int
    complete: bool
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    params: np.ndarray | None = None  # continuous v behind the rounded shifts
    method: str = "drp"

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "shifts": [{"sx": int(sx), "sy": int(sy)} for sx, sy in self.shifts],
            "per_step_transfers": [int(n) for n in self.per_step_transfers],
            "residual_defects": int(self.residual_defects),
            "effective_steps": int(self.effective_steps),
            "raw_T": int(self.raw_T),
            "complete": bool(self.complete),
            "config": self.config,
            "wall_time_s": float(self.wall_time),
        }
        if self.params is not None:
            out["v"] = [[float(x), float(y)] for x, y in np.asarray(self.params)]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RepairPlan":
        params = data.get("v")
        return cls(
            shifts=[(int(s["sx"]), int(s["sy"])) for s in data["shifts"]],
            per_step_transfers=[int(n) for n in data["per_step_transfers"]],
            residual_defects=int(data["residual_defects"]),
            effective_steps=int(data["effective_steps"]),
            raw_T=int(data["raw_T"]),
            complete=bool(data["complete"]),
            config=data.get("config", {}),
            wall_time=float(data.get("wall_time_s", 0.0)),
            params=None if params is None else np.asarray(params, dtype=np.float64),
            method=data.get("method", "drp"),
        )


@dataclass
class TraceLog:
    """One record per executed optimisation iteration."""

    loss: list[float] = field(default_factory=list)
    residual: list[int] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    grad_norm: list[np.ndarray] = field(default_factory=list)

    def record(self, loss: float, residual: int, v: np.ndarray, grad: np.ndarray) -> None:
        self.loss.append(float(loss))
        self.residual.append(int(residual))
        self.v.append(np.array(v, dtype=np.float64))
        self.grad_norm.append(np.linalg.norm(grad, axis=1))

    def __len__(self) -> int:
        return len(self.loss)

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "residual": self.residual,
            "v": [v.tolist() for v in self.v],
            "grad_norm": [g.tolist() for g in self.grad_norm],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TraceLog":
        return cls(
            loss=[float(x) for x in data["loss"]],
            residual=[int(x) for x in data["residual"]],
            v=[np.asarray(v, dtype=np.float64) for v in data["v"]],
            grad_norm=[np.asarray(g, dtype=np.float64) for g in data["grad_norm"]],
        )


@dataclass
class Intermediates:
    """``c2_history[k]`` is the target after ``k`` modules (``C2^(k+1)``)."""

    c2_history: list[np.ndarray]
    donor_shape: tuple[int, int]

    @property
    def T(self) -> int:
        return len(self.c2_history) - 1


class FixedTResult(NamedTuple):
    best_loss: float
    best_params: np.ndarray
    trace: TraceLog


class Adam:
    def __init__(self, lr: float = 1.0, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.s = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """In-place update of ``params``."""
        if self.m is None:
            self.m = np.zeros_like(params)
            self.s = np.zeros_like(params)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.s *= self.beta2
        self.s += (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        s_hat = self.s / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(s_hat) + self.eps)

    def stalled(self) -> bool:
        """True once no further update can move the parameters."""
        return self.m is not None and not np.any(self.m)


# -- model --------------------------------------------------------------------

def _param_matrix(params) -> np.ndarray:
    if len(params) and isinstance(params[0], ShiftParam):
        return np.array([p.v for p in params], dtype=np.float64)
    return np.asarray(params, dtype=np.float64).reshape(-1, 2)


def _grid(c, fill):
    if isinstance(c, ChipArray):
        return c.to_float()
    return np.asarray(c, dtype=np.float64)


def repair_forward(c1, c2, params, tape: GradTape | None = None, rounding: bool | Sequence[bool] = True):
    """Chain ``T`` transfer modules.  Returns ``(c1_final, c2_final, Intermediates)``."""
    V = _param_matrix(params)
    if len(V) < 1:
        raise ValueError("need at least one shift parameter")
    flags = [rounding] * len(V) if isinstance(rounding, bool) else list(rounding)
    x1, x2 = _grid(c1, 0), _grid(c2, 1)
    history = [x2]
    for v, rnd in zip(V, flags):
        x1, x2 = transfer_module_forward(x1, x2, v, tape=tape, rounding=rnd)
        history.append(x2)
    return x1, x2, Intermediates(history, x1.shape)


def loss_L1(inter: Intermediates, cfg: PlanConfig) -> float:
    T = inter.T
    T1 = cfg.horizon(T)
    early = float(inter.c2_history[T1].sum())
    final = float(inter.c2_history[T].sum())
    return -(early + cfg.lambda1 * (final - early))


def loss_L2(params, cfg: PlanConfig) -> float:
    V = _param_matrix(params)
    if len(V) < 2:
        return 0.0
    return cfg.lambda2 * float(np.abs(np.diff(V, axis=0)).sum())


def _loss_L2_grad(V: np.ndarray, cfg: PlanConfig) -> np.ndarray:
    g = np.zeros_like(V)
    if len(V) < 2 or cfg.lambda2 == 0.0:
        return g
    sgn = np.sign(np.diff(V, axis=0))
    g[1:] += cfg.lambda2 * sgn
    g[:-1] -= cfg.lambda2 * sgn
    return g


def repair_backward(tape: GradTape, inter: Intermediates, cfg: PlanConfig) -> np.ndarray:
    """Gradient of ``L1`` w.r.t. every block's ``v``, shape ``(T, 2)``."""
    T = inter.T
    T1 = cfg.horizon(T)
    g1 = np.zeros(inter.donor_shape)
    g2 = np.full(inter.c2_history[T].shape, -cfg.lambda1 if T1 < T else -1.0)
    grads = np.zeros((T, 2))
    for t in range(T, 0, -1):
        if t == T1 < T:
            g2 = g2 - (1.0 - cfg.lambda1)
        g1, g2, grads[t - 1] = transfer_module_backward(tape, g1, g2)
    return grads


def loss_and_grad(c1, c2, V: np.ndarray, cfg: PlanConfig):
    """One forward/backward sweep at the rounded shifts.

    Returns ``(loss, residual_defects, grad)`` where the residual is that of
    the executed integer plan.
    """
    tape = GradTape()
    _, c2_final, inter = repair_forward(c1, c2, V, tape=tape)
    loss = loss_L1(inter, cfg) + loss_L2(V, cfg)
    residual = int(round(c2_final.size - c2_final.sum()))
    grad = repair_backward(tape, inter, cfg) + _loss_L2_grad(V, cfg)
    return loss, residual, grad


# -- optimisation -------------------------------------------------------------

def optimize_fixed_T(c1, c2, T: int, cfg: PlanConfig) -> FixedTResult:
    """Adam on ``L1 + L2`` for a fixed module count, keeping the best rounded plan.

    ``best_loss`` is the lowest residual defect count of any rounded iterate.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    x1, x2 = _grid(c1, 0), _grid(c2, 1)
    V = np.zeros((T, 2))
    opt = Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.eps_adam)
    trace = TraceLog()
    best_residual = math.inf
    best_V = V.copy()
    for it in range(cfg.N_iter):
        loss, residual, grad = loss_and_grad(x1, x2, V, cfg)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteLossError(
                f"non-finite loss/gradient at iteration {it} (T={T}): loss={loss}, v={V.tolist()}")
        trace.record(loss, residual, V, grad)
        if residual < best_residual:
            best_residual = residual
            best_V = V.copy()
        if cfg.early_stop and residual == 0:
            break
        opt.step(V, grad)
        if opt.stalled():
            break
    return FixedTResult(float(best_residual), best_V, trace)


def simulate(donor: np.ndarray, target: np.ndarray, shifts) -> list[int]:
    """Apply the swap rule in place on boolean grids; returns per-step transfer counts."""
    h1, w1 = donor.shape
    h2, w2 = target.shape
    counts = []
    for sx, sy in shifts:
        sx, sy = int(sx), int(sy)
        r0, r1 = max(0, sy), min(h2, h1 + sy)
        q0, q1 = max(0, sx), min(w2, w1 + sx)
        if r0 >= r1 or q0 >= q1:
            counts.append(0)
            continue
        tv = target[r0:r1, q0:q1]
        dv = donor[r0 - sy:r1 - sy, q0 - sx:q1 - sx]
        move = dv & ~tv
        n = int(np.count_nonzero(move))
        if n:
            tv |= move
            dv &= ~move
        counts.append(n)
    return counts


def execute_plan(c1, c2, shifts):
    """Ground-truth integer simulation of a shift sequence.

    For each ``(s_x, s_y)``: every target hole at ``(i, j)`` facing a donor
    chip at ``(i - s_y, j - s_x)`` takes that chip.
    Returns ``(donor, target, per_step_transfers)``, the grids as :class:`ChipArray`.
    """
    d = (c1.cells if isinstance(c1, ChipArray) else np.asarray(c1)).astype(bool)
    t = (c2.cells if isinstance(c2, ChipArray) else np.asarray(c2)).astype(bool)
    counts = simulate(d, t, shifts)
    return ChipArray.donor(d), ChipArray.target(t), counts


def _effective(counts) -> int:
    return sum(1 for n in counts if n >= 1)


def adaptive_plan(c1, c2, cfg: PlanConfig | None = None) -> RepairPlan:
    """Grow the module count from ``T_start`` until a rounded plan leaves no defects."""
    cfg = cfg or PlanConfig()
    start = time.perf_counter()
    donor = c1 if isinstance(c1, ChipArray) else ChipArray.donor(c1)
    target = c2 if isinstance(c2, ChipArray) else ChipArray.target(c2)
    initial = defect_count(target)

    def finish(V, T, complete):
        shifts = [tuple(int(s) for s in ste_round(v)) for v in V]
        _, final, counts = execute_plan(donor, target, shifts)
        return RepairPlan(
            shifts=shifts,
            per_step_transfers=counts,
            residual_defects=defect_count(final),
            effective_steps=_effective(counts),
            raw_T=T,
            complete=complete,
            config=cfg.to_dict(),
            wall_time=time.perf_counter() - start,
            params=np.asarray(V, dtype=np.float64).reshape(-1, 2),
        )

    if initial == 0:
        return finish(np.zeros((0, 2)), 0, True)

    best = (math.inf, None, 0)
    x1, x2 = donor.to_float(), target.to_float()
    for T in range(cfg.T_start, cfg.T_max + 1):
        result = optimize_fixed_T(x1, x2, T, cfg)
        log.debug("T=%d best residual %s after %d iterations", T, result.best_loss, len(result.trace))
        if result.best_loss < best[0]:
            best = (result.best_loss, result.best_params, T)
        if result.best_loss < cfg.eps:
            return finish(result.best_params, T, True)
    log.warning("no complete plan up to T_max=%d; best residual %s", cfg.T_max, best[0])
    return finish(best[1], best[2], False)
