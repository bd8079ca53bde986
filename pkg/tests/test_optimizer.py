import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensemble_oc.analysis import ensemble_cost
from ensemble_oc.expr import parse_field_expression as parse
from ensemble_oc.optimizer import (
    PRUNE_WEIGHT,
    OptimizerOptions,
    ProjectionError,
    _blend,
    check_affine_in_u,
    improve_once,
    project_relaxed_to_ordinary,
    solve,
    write_control_csv,
    write_trace_json,
)
from ensemble_oc.problem import ConfigError, ControlSignal, RelaxedControl, VectorFieldSpec, load_problem

from conftest import config_path


def const(p, v=None):
    return ControlSignal.constant(p, v)


def relaxed(p, atoms, weights):
    a = np.asarray(atoms, dtype=float).reshape(-1, p.m)
    w = np.asarray(weights, dtype=float)
    return RelaxedControl(tuple(a for _ in range(p.time_steps)), tuple(w for _ in range(p.time_steps)))


@pytest.mark.parametrize(
    "kw", [{"max_iters": 0}, {"beta0": 0.0}, {"beta0": 1.5}, {"shrink": 1.0}, {"tol": 0.0}, {"mode": "greedy"}]
)
def test_options_validated(kw):
    with pytest.raises(ConfigError):
        OptimizerOptions(**kw)


def test_fixed_point_at_optimum(bang1d):
    u = const(bang1d, [-1.0])
    assert improve_once(bang1d, u) is u


def test_first_step_goes_to_vertex(bang1d):
    u1 = improve_once(bang1d, RelaxedControl.from_ordinary(const(bang1d, [0.0])), beta=1.0)
    means = np.array([u1.mean(k)[0] for k in range(bang1d.time_steps)])
    assert means[0] == -1.0
    # only the last intervals, where v is nearly flat, may keep the incumbent
    assert np.all(means[: bang1d.time_steps - 4] == -1.0)


def test_symmetric_instance_is_stationary(bang1d_symmetric):
    # H(t, .) is flat at u = 0 when rho and the slab are both centered
    u = const(bang1d_symmetric, [0.0])
    assert improve_once(bang1d_symmetric, u) is u


def test_half_blend(bang1d):
    u = RelaxedControl.from_ordinary(const(bang1d, [0.0]))
    u1 = improve_once(bang1d, u, beta=0.5)
    a, w = u1.mixture(0)
    assert a.ravel().tolist() == [0.0, -1.0] and w.tolist() == [0.5, 0.5]


def test_blend_prunes_and_merges():
    a, w = _blend(np.array([[0.0], [1.0]]), np.array([1 - 1e-7, 1e-7]), np.array([0.0]), 0.5)
    assert a.ravel().tolist() == [0.0] and w.tolist() == [1.0]
    a, w = _blend(np.array([[0.0]]), np.array([1.0]), np.array([0.0]), 0.3)
    assert a.ravel().tolist() == [0.0] and w.tolist() == [1.0]


@given(
    st.lists(st.floats(-1, 1), min_size=1, max_size=5),
    st.lists(st.floats(0.01, 1), min_size=5, max_size=5),
    st.floats(-1, 1),
    st.floats(1e-3, 1),
)
def test_blend_weights_valid(atoms, raw, target, beta):
    w = np.array(raw[: len(atoms)])
    w = w / w.sum()
    a, nw = _blend(np.array(atoms)[:, None], w, np.array([target]), beta)
    assert abs(nw.sum() - 1) <= 1e-12
    assert np.all((nw >= 0) & (nw <= 1))
    assert np.all(nw >= PRUNE_WEIGHT / (1 + 1e-9)) or len(nw) == 1
    RelaxedControl((a,), (nw,))


def test_ordinary_mode_switches_fraction(bang1d):
    opts = OptimizerOptions(mode="ordinary")
    u0 = const(bang1d, [0.0])
    full = improve_once(bang1d, u0, beta=1.0, opts=opts)
    part = improve_once(bang1d, u0, beta=0.25, opts=opts)
    changed_full = int(np.sum(full.values != 0))
    changed_part = int(np.sum(part.values != 0))
    assert changed_part == int(np.ceil(0.25 * changed_full))
    assert isinstance(part, ControlSignal)


def test_single_point_delta_converges_at_once(linear1d):
    tr = solve(linear1d)
    assert tr.converged and len(tr.records) == 1 and tr.records[0].iteration == 0


@pytest.mark.parametrize("mode", ["relaxed", "ordinary"])
def test_bang_solve(bang1d, mode):
    tr = solve(bang1d, const(bang1d, [0.0]), OptimizerOptions(mode=mode))
    phis = tr.accepted_phis
    assert all(b <= a + 1e-12 for a, b in zip(phis, phis[1:]))
    assert tr.converged and tr.stop_reason == "tolerance"
    assert tr.phi == pytest.approx(ensemble_cost(bang1d, const(bang1d, [-1.0])), abs=1e-3)


def test_smooth_lq_strictly_decreasing():
    p = load_problem(config_path("smooth_lq.json"))[0]
    tr = solve(p, const(p, [0.0]))
    phis = tr.accepted_phis
    assert all(b < a for a, b in zip(phis, phis[1:]))
    assert tr.converged
    # oracle: drive the mean 0.6 to zero at full speed, then hold
    # cost = int_0^0.6 (0.6 - t)^2 dt + Var = 0.072 + 0.25
    assert abs(tr.phi - 0.322) <= 5e-3


def test_projection_examples(bang1d):
    q = project_relaxed_to_ordinary(bang1d, relaxed(bang1d, [[-1.0], [1.0]], [0.5, 0.5]))
    assert np.all(q.values == 0.0)
    q = project_relaxed_to_ordinary(bang1d, relaxed(bang1d, [[0.25]], [1.0]))
    assert np.all(q.values == 0.25)


@settings(max_examples=5)
@given(st.floats(0, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_projection_preserves_cost(w, a, b):
    from ensemble_oc import get_problem

    p = get_problem("bang1d")
    u = relaxed(p, [[a], [b]], [w, 1 - w]) if a != b else relaxed(p, [[a]], [1.0])
    q = project_relaxed_to_ordinary(p, u)
    assert abs(ensemble_cost(p, u) - ensemble_cost(p, q)) <= 1e-3


def test_projection_refused_for_nonaffine(bang1d):
    p = bang1d.replace(f=VectorFieldSpec((parse("u1^2", 1, 1),)))
    ok, why = check_affine_in_u(p)
    assert not ok and "f" in why
    with pytest.raises(ProjectionError):
        project_relaxed_to_ordinary(p, relaxed(p, [[-1.0], [1.0]], [0.5, 0.5]))


def test_exports(tmp_path, bang1d):
    tr = solve(bang1d, const(bang1d, [0.0]))
    rows = list(csv.reader(write_control_csv(bang1d, tr.control, tmp_path / "c.csv").open()))
    assert rows[0] == ["t_lo", "t_hi", "atom", "u1", "weight"]
    q = project_relaxed_to_ordinary(bang1d, tr.control)
    rows = list(csv.reader(write_control_csv(bang1d, q, tmp_path / "o.csv").open()))
    assert rows[0] == ["t_lo", "t_hi", "u1"] and len(rows) == 1 + bang1d.time_steps
    d = json.loads(write_trace_json(tr, tmp_path / "t.json").read_text())
    assert d["converged"] is True and d["iterations"][0]["accepted"] is True


@pytest.mark.parametrize("name", ["linear1d", "bang1d", "rotation2d", "slab1d"])
def test_output_passes_check_on_catalog(name):
    from ensemble_oc import get_problem
    from ensemble_oc.optimality import check_maximum_condition

    p = get_problem(name)
    tr = solve(p)
    assert tr.converged
    assert check_maximum_condition(p, tr.control, tr.options.tol).satisfied
