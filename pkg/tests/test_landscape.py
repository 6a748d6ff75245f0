import csv
import json

import numpy as np
import pytest

from microled_repair.engine import ste_round
from microled_repair.grid import InstanceSpec, defect_count, generate_instance
from microled_repair.landscape import grad_trace, surrogate_loss, sweep_global, sweep_local
from microled_repair.planner import PlanConfig, TraceLog, execute_plan, optimize_fixed_T


@pytest.fixture(scope="module")
def trained():
    c1, c2 = generate_instance(InstanceSpec.square(14, 0.5, 0.2, 21))
    r = optimize_fixed_T(c1, c2, 3, PlanConfig(N_iter=80, early_stop=False, lr=0.3))
    return c1, c2, r


def test_global_empty_donor_is_constant():
    c2 = np.random.default_rng(0).integers(0, 2, (6, 6))
    g = sweep_global(np.zeros((6, 6)), c2, [(0.0, 0.0), (1.0, 2.0)], 1)
    assert np.all(g.loss == (c2 == 0).sum())
    assert g.sx[0] == -5 and g.sx[-1] == 5 and g.loss.shape == (11, 11)


def test_global_matches_planner_at_rounded_optimum(trained):
    c1, c2, r = trained
    shifts = [tuple(int(s) for s in ste_round(v)) for v in r.best_params]
    _, t, _ = execute_plan(c1, c2, shifts)
    assert defect_count(t) == r.best_loss
    for blk in range(1, 4):
        g = sweep_global(c1, c2, r.best_params, blk)
        assert g.loss_at(*shifts[blk - 1]) == r.best_loss
        assert g.loss.min() <= g.loss_at(0, 0)
        np.testing.assert_array_equal(g.a_final, shifts[blk - 1])


def test_global_every_point_matches_executor(trained):
    c1, c2, r = trained
    shifts = [tuple(int(s) for s in ste_round(v)) for v in r.best_params]
    g = sweep_global(c1, c2, r.best_params, 2, shift_range=(-3, 3))
    for sx, sy, val in g.rows():
        plan = [shifts[0], (int(sx), int(sy)), shifts[2]]
        _, t, _ = execute_plan(c1, c2, plan)
        assert val == defect_count(t)


def test_global_range_is_clamped_with_warning():
    with pytest.warns(UserWarning, match="clamped"):
        g = sweep_global(np.ones((3, 3)), np.zeros((3, 3)), [(0.0, 0.0)], 1, shift_range=(-10, 1))
    assert g.sx[0] == -2 and g.sx[-1] == 1
    assert "range_clamped" in g.flags


def test_block_index_checked():
    with pytest.raises(ValueError):
        sweep_global(np.ones((3, 3)), np.zeros((3, 3)), [(0.0, 0.0)], 2)
    with pytest.raises(ValueError):
        sweep_local(np.ones((3, 3)), np.zeros((3, 3)), [(0.0, 0.0)], 0)


def test_local_integer_points_equal_integer_loss(trained):
    c1, c2, r = trained
    shifts = [tuple(int(s) for s in ste_round(v)) for v in r.best_params]
    g = sweep_local(c1, c2, r.best_params, 2, window=2.0, subdivisions=4, trace=r.trace)
    hits = 0
    for sx, sy, val in g.rows():
        if float(sx).is_integer() and float(sy).is_integer():
            _, t, _ = execute_plan(c1, c2, [shifts[0], (int(sx), int(sy)), shifts[2]])
            assert val == defect_count(t)
            hits += 1
    assert hits >= 9


def test_local_grid_and_markers(trained):
    c1, c2, r = trained
    g = sweep_local(c1, c2, r.best_params, 1, trace=r.trace)
    v = r.best_params[0]
    assert g.sx[1] - g.sx[0] == pytest.approx(0.1)
    assert g.sx[0] >= v[0] - 3 - 1e-9 and g.sx[-1] <= v[0] + 3 + 1e-9
    m = g.markers()
    assert m["trajectory"][0] == [0.0, 0.0]
    assert len(m["trajectory"]) == min(100, len(r.trace))
    assert m["a_final"] == [int(x) for x in ste_round(m["v_final"])]
    assert "flags" not in m


def test_local_without_trace_is_flagged(trained):
    c1, c2, r = trained
    g = sweep_local(c1, c2, r.best_params, 1, window=0.5, trace=None)
    assert g.trajectory is None and g.flags == ["no_trace"]
    assert g.markers()["trajectory"] == []


def test_surrogate_is_continuous_between_lattice_points():
    rng = np.random.default_rng(1)
    x1, x2 = rng.integers(0, 2, (6, 6)).astype(float), rng.integers(0, 2, (6, 6)).astype(float)
    a = surrogate_loss(x1, x2, (0.5, 0.2), [])
    b = surrogate_loss(x1, x2, (0.5 + 1e-7, 0.2), [])
    assert abs(a - b) < 1e-5


def test_csv_and_markers_formats(trained, tmp_path):
    c1, c2, r = trained
    g = sweep_global(c1, c2, r.best_params, 1, shift_range=(-1, 1))
    g.write_csv(tmp_path / "g.csv")
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0] == ["sx", "sy", "loss"] and len(rows) == 10
    assert rows[1][:2] == ["-1", "-1"]
    g.write_markers(tmp_path / "m.json")
    m = json.loads((tmp_path / "m.json").read_text())
    assert set(m) == {"block", "v_final", "a_final", "trajectory"}


def test_grad_trace_series(trained, tmp_path):
    _, _, r = trained
    gt = grad_trace(r.trace)
    assert gt.blocks == 3
    s = gt.series(1)
    assert len(s) == len(r.trace)
    assert np.all(gt.shift_norm[0] == 0)
    np.testing.assert_allclose(gt.shift_norm[-1], np.linalg.norm(r.trace.v[-1], axis=1))
    gt.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["epoch", "block", "shift_norm", "grad_norm"]
    assert len(rows) == 1 + 3 * len(r.trace)


def test_grad_trace_empty():
    with pytest.raises(ValueError):
        grad_trace(TraceLog())
