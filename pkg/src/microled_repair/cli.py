"""``microled-repair`` command line.

Exit codes: 0 success, 2 validation error, 3 incomplete repair, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import lps_plan
from .bench import bench_condition
from .grid import (
    GridFormatError,
    InstanceSpec,
    array_to_dict,
    defect_count,
    generate_instance,
    read_array,
)
from .landscape import grad_trace, sweep_global, sweep_local
from .planner import PlanConfig, RepairPlan, TraceLog, adaptive_plan, execute_plan, optimize_fixed_T

EXIT_OK, EXIT_INVALID, EXIT_INCOMPLETE, EXIT_IO = 0, 2, 3, 4

# flag dest -> PlanConfig field
_CONFIG_FLAGS = {
    "T_max": ("--T-max", int),
    "N_iter": ("--n-iter", int),
    "eps": ("--eps", float),
    "T_start": ("--T-start", int),
    "T1": ("--T1", int),
    "lambda1": ("--lambda1", float),
    "lambda2": ("--lambda2", float),
    "lr": ("--lr", float),
    "adam_beta1": ("--beta1", float),
    "adam_beta2": ("--beta2", float),
    "eps_adam": ("--eps-adam", float),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("planner configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="JSON file with PlanConfig fields")
    for dest, (flag, typ) in _CONFIG_FLAGS.items():
        g.add_argument(flag, dest=dest, type=typ, default=None)
    g.add_argument("--no-early-stop", dest="early_stop", action="store_false", default=None,
                   help="keep optimising after the residual reaches zero")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None, help="single source of randomness")


def _config(args) -> PlanConfig:
    data = {}
    if getattr(args, "config", None):
        data = _read_json(args.config)
        if not isinstance(data, dict):
            raise CliError(f"{args.config}: config must be a JSON object")
    for dest in list(_CONFIG_FLAGS) + ["early_stop", "seed"]:
        val = getattr(args, dest, None)
        if val is not None:
            data[dest] = val
    try:
        return PlanConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from exc


def _read_json(path: Path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc


def _write_json(path: Path, data) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(data, indent=2) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _load_array(path: Path, role: str):
    try:
        arr = read_array(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except GridFormatError as exc:
        raise CliError(str(exc)) from exc
    if arr.role != role:
        raise CliError(f"{path}: expected a {role} array (oob_fill={1 if role == 'target' else 0})")
    return arr


def _dims(a) -> list[int]:
    return [a.width, a.height]


def _plan_payload(plan: RepairPlan, donor, target, seed) -> dict:
    out = plan.to_dict()
    out["donor_dims"] = _dims(donor)
    out["target_dims"] = _dims(target)
    out["initial_defects"] = defect_count(target)
    out["config"] = dict(out.get("config") or {}, seed=seed)
    return out


# -- subcommands --------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.size is not None:
        ddims = tdims = (args.size, args.size)
    else:
        if args.donor_dims is None or args.target_dims is None:
            raise CliError("give --size or both --donor-dims and --target-dims")
        ddims, tdims = tuple(args.donor_dims), tuple(args.target_dims)
    seed = 0 if args.seed is None else args.seed
    try:
        spec = InstanceSpec(ddims, tdims, args.d1, args.d2, seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    donor, target = generate_instance(spec)
    meta = {"donor_dims": list(ddims), "target_dims": list(tdims), "d1": args.d1, "d2": args.d2, "seed": seed}
    out_dir = Path(args.out_dir)
    for name, arr in (("donor", donor), ("target", target)):
        path = getattr(args, f"{name}_out") or out_dir / f"{name}.json"
        _write_json(path, dict(array_to_dict(arr), generator=meta))
    print(f"donor: {defect_count(donor)} empty sites, target: {defect_count(target)} defects")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _config(args)
    donor, target = _load_array(args.donor, "donor"), _load_array(args.target, "target")
    plan = adaptive_plan(donor, target, cfg)
    _write_json(args.out, _plan_payload(plan, donor, target, cfg.seed))
    print(f"T={plan.raw_T} effective={plan.effective_steps} residual={plan.residual_defects} "
          f"complete={plan.complete} ({plan.wall_time:.2f}s)")
    return EXIT_OK if plan.complete else EXIT_INCOMPLETE


def cmd_lps(args) -> int:
    donor, target = _load_array(args.donor, "donor"), _load_array(args.target, "target")
    plan = lps_plan(donor, target)
    _write_json(args.out, _plan_payload(plan, donor, target, None))
    print(f"steps={plan.effective_steps} residual={plan.residual_defects} complete={plan.complete}")
    return EXIT_OK if plan.complete else EXIT_INCOMPLETE


def cmd_simulate(args) -> int:
    donor, target = _load_array(args.donor, "donor"), _load_array(args.target, "target")
    data = _read_json(args.plan)
    try:
        plan = RepairPlan.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{args.plan}: not a repair plan ({exc})") from exc
    for key, arr in (("donor_dims", donor), ("target_dims", target)):
        if key in data and list(data[key]) != _dims(arr):
            raise CliError(f"plan {key} {data[key]} does not match array dims {_dims(arr)}")
    d, t, counts = execute_plan(donor, target, plan.shifts)
    result = {
        "residual_defects": defect_count(t),
        "per_step_transfers": counts,
        "effective_steps": sum(1 for n in counts if n >= 1),
        "matches_plan": defect_count(t) == plan.residual_defects and counts == plan.per_step_transfers,
        "plan": str(args.plan),
    }
    if args.out:
        _write_json(args.out, result)
    for name, arr in (("donor", d), ("target", t)):
        path = getattr(args, f"{name}_out")
        if path:
            _write_json(path, array_to_dict(arr))
    print(json.dumps({k: result[k] for k in ("residual_defects", "effective_steps", "matches_plan")}))
    return EXIT_OK if result["residual_defects"] == 0 else EXIT_INCOMPLETE


def _train(args, donor, target):
    cfg = _config(args)
    if args.T < 1:
        raise CliError("--T must be >= 1")
    result = optimize_fixed_T(donor, target, args.T, cfg)
    return cfg, result


def cmd_landscape(args) -> int:
    donor, target = _load_array(args.donor, "donor"), _load_array(args.target, "target")
    trace = None
    if args.plan:
        plan = RepairPlan.from_dict(_read_json(args.plan))
        if plan.params is None:
            raise CliError(f"{args.plan}: plan carries no continuous parameters ('v')")
        params, cfg = plan.params, _config(args)
        best = float(plan.residual_defects)
    else:
        cfg, result = _train(args, donor, target)
        params, trace, best = result.best_params, result.trace, result.best_loss
    T = len(params)
    blocks = args.blocks or list(range(1, T + 1))
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out_dir}: {exc}", EXIT_IO) from exc
    rng = tuple(args.range) if args.range else None
    try:
        for t in blocks:
            marked = None
            if not args.no_global:
                marked = sweep_global(donor, target, params, t, rng)
                marked.write_csv(out_dir / f"global_block{t}.csv")
            if not args.no_local:
                marked = sweep_local(donor, target, params, t, args.window, args.subdivisions, trace)
                marked.write_csv(out_dir / f"local_block{t}.csv")
            if marked is not None:
                _write_json(out_dir / f"markers_block{t}.json", dict(marked.markers(), config=cfg.to_dict()))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    except OSError as exc:
        raise CliError(f"cannot write landscape output: {exc}", EXIT_IO) from exc
    _write_json(out_dir / "run.json", {
        "T": T, "blocks": blocks, "best_residual": best, "v": np.asarray(params).tolist(),
        "config": cfg.to_dict(), "range": rng, "window": args.window, "subdivisions": args.subdivisions,
    })
    print(f"wrote landscapes for blocks {blocks} to {out_dir} (best residual {best:g})")
    return EXIT_OK


def cmd_trace(args) -> int:
    donor, target = _load_array(args.donor, "donor"), _load_array(args.target, "target")
    cfg, result = _train(args, donor, target)
    gt = grad_trace(result.trace)
    try:
        gt.write_csv(args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from exc
    meta = Path(str(args.out) + ".json") if args.json is None else args.json
    _write_json(meta, {"T": args.T, "iterations": len(result.trace), "best_residual": result.best_loss,
                       "final_grad_norm": gt.grad_norm[-1].tolist(), "config": cfg.to_dict(),
                       "trace": result.trace.to_dict()})
    print(f"{len(result.trace)} epochs, best residual {result.best_loss:g}, "
          f"final grad norms {np.array2string(gt.grad_norm[-1], precision=3)}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    seed = 0 if args.seed is None else args.seed
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    try:
        report = bench_condition(args.size, args.d1, args.d2, args.trials, methods, cfg, seed, args.jobs)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    data = report.to_dict()
    _write_json(args.out, data)
    ref = data["paper_reference"]["matched_row"] or {}
    for m in report.methods:
        s = data["summary"][m]["steps"]
        paper = ref.get(m.upper())
        extra = f" (paper {paper})" if paper is not None else ""
        print(f"{m.upper()}: {s['mean']:.2f} +- {s['std']:.2f}{extra}, "
              f"complete {data['summary'][m]['complete']}/{report.trials}")
    incomplete = any(data["summary"][m]["complete"] < report.trials for m in report.methods)
    return EXIT_INCOMPLETE if incomplete else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="microled-repair", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random donor/target pair")
    g.add_argument("--size", type=int)
    g.add_argument("--donor-dims", type=int, nargs=2, metavar=("W", "H"))
    g.add_argument("--target-dims", type=int, nargs=2, metavar=("W", "H"))
    g.add_argument("--d1", type=float, required=True, help="donor defect rate")
    g.add_argument("--d2", type=float, required=True, help="target defect rate")
    _add_seed(g)
    g.add_argument("--out-dir", default=".")
    g.add_argument("--donor-out", type=Path)
    g.add_argument("--target-out", type=Path)
    g.set_defaults(func=cmd_gen)

    def arrays(sp):
        sp.add_argument("--donor", type=Path, required=True)
        sp.add_argument("--target", type=Path, required=True)

    pl = sub.add_parser("plan", help="differentiable repair planning (adaptive T)")
    arrays(pl)
    pl.add_argument("--out", type=Path, default=Path("plan.json"))
    _add_config_flags(pl)
    _add_seed(pl)
    pl.set_defaults(func=cmd_plan)

    lp = sub.add_parser("lps", help="local proximity searching baseline")
    arrays(lp)
    lp.add_argument("--out", type=Path, default=Path("lps_plan.json"))
    lp.set_defaults(func=cmd_lps)

    si = sub.add_parser("simulate", help="replay a plan with the integer executor")
    arrays(si)
    si.add_argument("--plan", type=Path, required=True)
    si.add_argument("--out", type=Path)
    si.add_argument("--donor-out", type=Path)
    si.add_argument("--target-out", type=Path)
    si.set_defaults(func=cmd_simulate)

    la = sub.add_parser("landscape", help="global/local loss landscapes per block")
    arrays(la)
    la.add_argument("--T", type=int, default=5, help="modules to train when no --plan is given")
    la.add_argument("--plan", type=Path, help="reuse the continuous parameters of a plan file")
    la.add_argument("--blocks", type=int, nargs="+")
    la.add_argument("--range", type=int, nargs=2, metavar=("MIN", "MAX"))
    la.add_argument("--window", type=float, default=3.0)
    la.add_argument("--subdivisions", type=int, default=10, help="local grid points per cell")
    la.add_argument("--no-global", action="store_true")
    la.add_argument("--no-local", action="store_true")
    la.add_argument("--out-dir", type=Path, default=Path("landscape"))
    _add_config_flags(la)
    _add_seed(la)
    la.set_defaults(func=cmd_landscape)

    tr = sub.add_parser("trace", help="per-block shift and gradient norms per epoch")
    arrays(tr)
    tr.add_argument("--T", type=int, default=5)
    tr.add_argument("--out", type=Path, default=Path("trace.csv"))
    tr.add_argument("--json", type=Path, help="metadata/trace JSON (default: <out>.json)")
    _add_config_flags(tr)
    _add_seed(tr)
    tr.set_defaults(func=cmd_trace)

    be = sub.add_parser("bench", help="paired DRP/LPS benchmark over seeded instances")
    be.add_argument("--size", type=int, required=True)
    be.add_argument("--d1", type=float, required=True)
    be.add_argument("--d2", type=float, required=True)
    be.add_argument("--trials", type=int, default=100)
    be.add_argument("--methods", default="drp,lps")
    be.add_argument("--jobs", type=int, default=1)
    be.add_argument("--out", type=Path, default=Path("bench.json"))
    _add_config_flags(be)
    _add_seed(be)
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
