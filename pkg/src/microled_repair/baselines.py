"""Local proximity searching: the greedy nearest-chip baseline."""

from __future__ import annotations

import time

import numpy as np

from .grid import ChipArray, defect_count
from .planner import RepairPlan, execute_plan


class Unsolvable(Exception):
    """Defects remain but the donor has no chips left."""


def lps_select(c1, c2):
    """Pick the next shift ``(s_x, s_y)``, or ``None`` when the target is full.

    The first empty target site in row-major order is paired with the nearest
    donor chip (squared Euclidean distance, row-major tie-break); the returned
    shift lands that chip on the site.
    """
    target = c2.cells if isinstance(c2, ChipArray) else np.asarray(c2)
    donor = c1.cells if isinstance(c1, ChipArray) else np.asarray(c1)
    holes = np.flatnonzero(target.ravel() == 0)
    if holes.size == 0:
        return None
    i, j = divmod(int(holes[0]), target.shape[1])
    chips = np.argwhere(donor)  # row-major order
    if chips.size == 0:
        raise Unsolvable(f"no donor chips left for the defect at ({i}, {j})")
    d2 = (chips[:, 0] - i) ** 2 + (chips[:, 1] - j) ** 2
    k, l = chips[int(np.argmin(d2))]
    return (j - int(l), i - int(k))


def lps_plan(c1, c2) -> RepairPlan:
    start = time.perf_counter()
    donor = c1 if isinstance(c1, ChipArray) else ChipArray.donor(c1)
    target = c2 if isinstance(c2, ChipArray) else ChipArray.target(c2)
    d, t = donor, target
    shifts, counts = [], []
    complete = True
    while True:
        try:
            s = lps_select(d, t)
        except Unsolvable:
            complete = False
            break
        if s is None:
            break
        d, t, (n,) = execute_plan(d, t, [s])
        shifts.append(s)
        counts.append(n)
    return RepairPlan(
        shifts=shifts,
        per_step_transfers=counts,
        residual_defects=defect_count(t),
        effective_steps=sum(1 for n in counts if n >= 1),
        raw_T=len(shifts),
        complete=complete,
        wall_time=time.perf_counter() - start,
        method="lps",
    )
