"""Shift-sequence planning for microLED array repair.

A donor array lends chips to a defective target array through a sequence of
integer platform shifts.  The planner optimises those shifts by gradient
descent through a differentiable transfer model with straight-through
rounding; a greedy nearest-chip baseline and landscape/benchmark tooling sit
alongside.
"""

__version__ = "0.1.0"

from .baselines import lps_plan, lps_select
from .engine import (
    GradTape,
    ShiftParam,
    kernel_deriv,
    kernel_eval,
    shift_backward,
    shift_forward,
    ste_round,
    ste_round_backward,
    transfer_backward,
    transfer_forward,
    transfer_module_backward,
    transfer_module_forward,
)
from .grid import (
    ChipArray,
    InstanceSpec,
    defect_count,
    defect_rate,
    generate_instance,
    read_array,
    write_array,
)
from .planner import (
    PlanConfig,
    RepairPlan,
    TraceLog,
    adaptive_plan,
    execute_plan,
    loss_L1,
    loss_L2,
    optimize_fixed_T,
    repair_forward,
)
