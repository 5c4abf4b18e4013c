import json
import math

import numpy as np
import pytest

from polariton_qubit.config import parse_config
from polariton_qubit.gates import pi_rotation_fidelity
from polariton_qubit.sweep import (OptimizeSpec, SweepAxis, SweepResult, SweepSpec, emit_results,
                                   evaluate_point, get_path, load_results, load_sweep_csv,
                                   optimize_local, run_grid, set_path, sweep_csv)


@pytest.fixture(scope="module")
def trend():
    return parse_config(preset="toy-trend")


# -- optimizer -------------------------------------------------------------------

def test_optimizer_finds_quadratic_maximum():
    target = np.array([0.3, -1.2])
    res = optimize_local(lambda x: -np.sum((x - target) ** 2), [1.0, 1.0],
                         bounds=[(-3, 3), (-3, 3)], max_evals=400, xatol=1e-7, fatol=1e-14)
    assert np.max(np.abs(res.x - target)) <= 1e-4
    assert res.converged and res.flag == ""


def test_optimizer_respects_bounds():
    res = optimize_local(lambda x: x[0], [0.5], bounds=[(0.0, 1.0)], max_evals=200)
    assert 0.0 <= res.x[0] <= 1.0
    assert res.value == pytest.approx(1.0, abs=1e-3)


def test_optimizer_never_below_seed():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x0 = rng.uniform(-1, 1, 2)
        f = lambda x: math.cos(5 * x[0]) * math.sin(3 * x[1])
        res = optimize_local(f, x0, bounds=[(-1, 1), (-1, 1)], max_evals=15)
        assert res.value >= res.seed_value
        assert res.value == pytest.approx(f(res.x))


def test_optimizer_budget_flag():
    res = optimize_local(lambda x: -np.sum(x**2), [2.0, 2.0], bounds=[(-3, 3), (-3, 3)], max_evals=5)
    assert res.n_evals <= 5
    assert res.flag == "budget_exhausted" and not res.converged


def test_optimizer_treats_nan_as_worst():
    f = lambda x: float("nan") if x[0] > 0.5 else -(x[0] - 0.4) ** 2
    res = optimize_local(f, [0.2], bounds=[(0.0, 1.0)], max_evals=100)
    assert res.x[0] <= 0.5 and math.isfinite(res.value)


# -- specs ---------------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(())
    ax = SweepAxis("delta_p", 1, 2, 2)
    with pytest.raises(ValueError):
        SweepSpec((ax, ax, ax))
    with pytest.raises(ValueError):
        SweepAxis("nope", 0, 1, 2)
    with pytest.raises(ValueError):
        SweepSpec((ax,), inner="bogus")
    with pytest.raises(ValueError):
        OptimizeSpec(params=("omega0",), lower=(2.0,), upper=(1.0,))
    assert SweepAxis("V", 0.1, 1.0, 3, scale="log").values()[1] == pytest.approx(math.sqrt(0.1))


def test_set_and_get_path(trend):
    cfg = set_path(trend, "pulse.tau_ps", 33.0)
    assert get_path(cfg, "pulse.tau_ps") == 33.0 and trend.pulse.tau_ps == 20.0
    with pytest.raises(KeyError):
        set_path(trend, "pulse.nope", 1.0)


# -- grids -----------------------------------------------------------------------

def test_single_cell_equals_direct_call(trend):
    spec = SweepSpec((SweepAxis("delta_p", 1.5, 1.5, 1),))
    res = run_grid(spec, trend)
    cfg = set_path(trend, "device.delta_p_mev", 1.5)
    direct = pi_rotation_fidelity(cfg.device, cfg.pulse, settings=cfg.settings)
    assert res.fidelity[0] == direct.fidelity
    assert res.rotation_angle[0] == direct.rotation_angle


def test_order_independence_and_csv_shape(trend, tmp_path):
    spec = SweepSpec((SweepAxis("tau", 15, 25, 2), SweepAxis("omega0", 500, 800, 2)))
    a = run_grid(spec, trend)
    b = run_grid(spec, trend, order=[3, 1, 0, 2])
    pa = emit_results(a, tmp_path / "a")
    pb = emit_results(b, tmp_path / "b")
    assert pa["csv"].read_bytes() == pb["csv"].read_bytes()
    assert pa["json"].read_bytes() == pb["json"].read_bytes()
    rows = [r for r in pa["csv"].read_text().splitlines() if not r.startswith("#")]
    assert len(rows) == 3 and all(len(r.split(",")) == 3 for r in rows)
    with pytest.raises(ValueError):
        run_grid(spec, trend, order=[0, 0, 1, 2])


def test_csv_and_json_round_trip(trend, tmp_path):
    spec = SweepSpec((SweepAxis("tau", 15, 25, 2), SweepAxis("omega0", 500, 800, 3)))
    res = run_grid(spec, trend)
    paths = emit_results(res, tmp_path, header="schema_version=1")
    params, coords, f = load_sweep_csv(paths["csv"])
    assert params == ["tau", "omega0"]
    np.testing.assert_array_equal(f, res.fidelity)
    for c, c0 in zip(coords, res.coords):
        np.testing.assert_array_equal(c, c0)
    back = load_results(paths["json"])
    np.testing.assert_array_equal(back.fidelity, res.fidelity)
    np.testing.assert_array_equal(back.flags, res.flags)
    assert back.best == res.best


def test_line_csv_round_trip():
    res = SweepResult(["delta_p"], [np.array([1.0, 2.0])], np.array([0.5, 0.75]),
                      np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), np.ones(2, int),
                      np.array(["", ""], dtype=object))
    text = sweep_csv(res)
    assert text.splitlines()[0] == "delta_p,F"


def test_failed_cells_are_flagged_not_fatal(trend):
    # a near-zero residual tolerance aborts the strongly driven cell only
    cfg = set_path(trend, "solver.residual_abort", 1e-9)
    spec = SweepSpec((SweepAxis("omega0", 1.0, 677.2, 2),))
    res = run_grid(spec, cfg)
    assert math.isfinite(res.fidelity[0])
    assert math.isnan(res.fidelity[1])
    assert res.flags[1].startswith("failed:")
    assert res.best["index"] == [0]
    d = json.loads(json.dumps(res.to_dict()))
    assert d["fidelity"][1] is None


def test_thread_count_does_not_change_output(trend, tmp_path):
    spec = SweepSpec((SweepAxis("delta_p", 1, 3, 3),))
    one = emit_results(run_grid(spec, trend, threads=1), tmp_path / "1")
    two = emit_results(run_grid(spec, trend, threads=2), tmp_path / "2")
    assert one["csv"].read_bytes() == two["csv"].read_bytes()
    assert one["json"].read_bytes() == two["json"].read_bytes()


def test_loss_line_nonincreasing(trend):
    spec = SweepSpec((SweepAxis("gamma", 0.02, 0.2, 8),), inner="calibrate")
    res = run_grid(spec, trend)
    assert np.all(np.diff(res.fidelity) <= 0)


def test_inner_optimize_beats_calibration(trend):
    opt = OptimizeSpec(params=("omega0", "tau"), lower=(100.0, 5.0), upper=(5000.0, 100.0),
                       max_evals=12)
    cal = evaluate_point(trend, SweepSpec((SweepAxis("delta_p", 1, 1, 1),), inner="calibrate"))
    best = evaluate_point(trend, SweepSpec((SweepAxis("delta_p", 1, 1, 1),), inner="optimize"), opt)
    assert best.fidelity >= cal.fidelity
    assert best.n_evals > cal.n_evals


def test_optimum_seeded_from_grid_best(trend):
    spec = SweepSpec((SweepAxis("omega0", 500, 800, 4),))
    grid = run_grid(spec, trend)
    cfg0 = set_path(trend, "pulse.omega0_mev", grid.best["coords"]["omega0"])

    def f(x):
        cfg = set_path(cfg0, "pulse.omega0_mev", float(x[0]))
        return pi_rotation_fidelity(cfg.device, cfg.pulse, settings=cfg.settings).fidelity

    res = optimize_local(f, [cfg0.pulse.omega0_mev], bounds=[(400.0, 900.0)], max_evals=10)
    assert res.value >= grid.best["fidelity"]
