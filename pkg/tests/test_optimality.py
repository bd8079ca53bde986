import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensemble_oc.expr import parse_field_expression as parse
from ensemble_oc.optimality import (
    adjoint_costate_field,
    adjoint_pair,
    check_maximum_condition,
    eta,
    hamiltonian_density,
    hamiltonian_table,
    needle_derivative_fd,
    needle_variation,
    pontryagin_reduction_mc,
    write_hamiltonian_csv,
)
from ensemble_oc.problem import ControlSignal, CostFieldSpec, RelaxedControl, load_problem
from ensemble_oc.transport import ValueField, mass

from conftest import config_path


def const(p, v=None):
    return ControlSignal.constant(p, v)


@pytest.fixture(scope="module")
def smooth_lq():
    return load_problem(config_path("smooth_lq.json"))[0]


@pytest.fixture(scope="module")
def bang_pair(bang1d):
    return adjoint_pair(bang1d, const(bang1d, [0.0]))


def test_zero_field_zero_cost(slab1d):
    pair = adjoint_pair(slab1d, const(slab1d), phi=CostFieldSpec(parse("0", 1)))
    assert hamiltonian_density(slab1d, pair.value, pair.density, 0.5, [], phi=pair.phi) == 0.0


def test_bang_hamiltonian_is_affine(bang1d, bang_pair):
    v, rho = bang_pair.value, bang_pair.density
    g = v.grid
    for t in (0.0, 0.25, 0.5):
        j = v.index(t)
        hs = [hamiltonian_density(bang1d, v, rho, t, [w]) for w in (-1.0, 0.0, 1.0)]
        assert abs(hs[1] - 0.5 * (hs[0] + hs[2])) <= 1e-10
        # direct evaluation of -u int rho v_x - int phi rho with its own derivative
        vx = np.gradient(v.values[j], g.axes[0], edge_order=1)
        slope = np.trapezoid(rho.values[j] * vx, g.axes[0])
        base = np.trapezoid(rho.values[j] * (np.abs(g.axes[0]) < 0.5), g.axes[0])
        for w, h in zip((-1.0, 0.0, 1.0), hs):
            assert h == pytest.approx(-w * slope - base, abs=1e-12)


def test_table_matches_density_form(bang1d, bang_pair):
    j = 16
    t = bang_pair.value.times[j]
    table = hamiltonian_table(bang1d, bang_pair, j, np.array([[-1.0], [0.5]]))
    direct = [hamiltonian_density(bang1d, bang_pair.value, bang_pair.density, t, [w]) for w in (-1.0, 0.5)]
    assert np.allclose(table, direct, rtol=0, atol=1e-14)


def test_cost_shift_moves_h_by_mass(bang1d):
    u = const(bang1d, [0.0])
    kappa = 0.75
    a = adjoint_pair(bang1d, u)
    b = adjoint_pair(bang1d, u, phi=CostFieldSpec(parse(f"step(0.5 - abs(x1)) + {kappa}", 1, 1)))
    for t in (0.0, 0.5):
        ha = hamiltonian_density(bang1d, a.value, a.density, t, [1.0], a.phi)
        hb = hamiltonian_density(bang1d, b.value, b.density, t, [1.0], b.phi)
        assert hb - ha == pytest.approx(-kappa * mass(a.density, t), abs=1e-12)


def test_eta_self_is_zero(bang1d, bang_pair):
    for t in (0.0, 0.3125, 1.0):
        assert eta(bang1d, bang_pair.value, bang_pair.density, t, [0.0], [0.0]) == 0.0


def test_eta_ignores_u_independent_cost(bang1d, bang_pair):
    # with v and rho held fixed, a u-independent g enters every H(t, .) equally
    v, rho = bang_pair.value, bang_pair.density
    g_phi = CostFieldSpec(parse("step(0.5 - abs(x1)) + exp(-x1^2) * t", 1, 1))
    for t in (0.125, 0.5):
        ha = [hamiltonian_density(bang1d, v, rho, t, [w]) for w in (-1.0, 1.0)]
        hb = [hamiltonian_density(bang1d, v, rho, t, [w], g_phi) for w in (-1.0, 1.0)]
        assert hb[1] - hb[0] == pytest.approx(ha[1] - ha[0], abs=1e-12)
        ea = eta(bang1d, v, rho, t, [1.0], [0.0])
        eb = eta(bang1d, v, rho, t, [1.0], [0.0], g_phi)
        assert eb == pytest.approx(ea, abs=1e-12)


@settings(max_examples=25)
@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 64))
def test_affine_midpoint_identity(a, b, j):
    from ensemble_oc import get_problem

    p = get_problem("bang1d")
    pair = _cached_pair(p)
    h = hamiltonian_table(p, pair, j, np.array([[a], [b], [0.5 * (a + b)]]))
    assert abs(h[2] - 0.5 * (h[0] + h[1])) <= 1e-10


_PAIRS = {}


def _cached_pair(p):
    if p.name not in _PAIRS:
        _PAIRS[p.name] = adjoint_pair(p, const(p, [0.0]))
    return _PAIRS[p.name]


def test_uncontrolled_is_satisfied(linear1d):
    rep = check_maximum_condition(linear1d, const(linear1d))
    assert rep.satisfied and rep.worst_violation == 0.0


def test_suboptimal_bang_violates(bang1d, bang_pair):
    rep = check_maximum_condition(bang1d, bang_pair.control, pair=bang_pair)
    assert not rep.satisfied
    assert rep.worst_violation < -0.3
    # the gain comes from pushing mass left, out of the slab
    assert np.all(rep.argmax[rep.violating] == -1.0)
    assert 0 < rep.violating_fraction < 1
    d = rep.to_dict()
    assert d["worst_control"].tolist() == [-1.0] and d["satisfied"] is False


def test_bang_optimum_passes_fine_grid(bang1d):
    rep = check_maximum_condition(bang1d, const(bang1d, [-1.0]), tol=1e-2, per_axis=41)
    assert rep.satisfied
    assert np.all(rep.eta_min <= 0)


def test_relaxed_candidate_accepted(bang1d):
    u = RelaxedControl(
        tuple(np.array([[-1.0], [1.0]]) for _ in range(bang1d.time_steps)),
        tuple(np.array([0.5, 0.5]) for _ in range(bang1d.time_steps)),
    )
    rep = check_maximum_condition(bang1d, u)
    # H is affine, so the mixture sits at H(0) and u = -1 beats it
    assert not rep.satisfied


def test_hamiltonian_csv(tmp_path, bang1d, bang_pair):
    rep = check_maximum_condition(bang1d, bang_pair.control, per_axis=3, pair=bang_pair)
    rows = list(csv.reader(write_hamiltonian_csv(rep, tmp_path / "h.csv").open()))
    assert rows[0] == ["t", "u1", "H"]
    assert len(rows) == 1 + 3 * (bang1d.time_steps + 1)


def test_needle_self_is_zero(bang1d):
    nc = needle_derivative_fd(bang1d, const(bang1d, [0.0]), 0.25, [0.0], [1 / 8, 1 / 16])
    assert nc.quotients == [0.0, 0.0] and nc.eta == 0.0


def test_needle_converges_bang(bang1d, bang_pair):
    nc = needle_derivative_fd(bang1d, bang_pair.control, 0.25, [1.0], [1 / 8, 1 / 16, 1 / 32, 1 / 64], pair=bang_pair)
    err = nc.errors
    assert all(b <= a for a, b in zip(err, err[1:]))
    assert err[-1] <= 2e-2


def test_needle_smooth_instance(smooth_lq):
    p = smooth_lq
    nc = needle_derivative_fd(p, const(p, [0.0]), 0.25, [1.0], [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    # v = (1 - t) x^2, so eta(t, 1) = 2 (1 - t) E[y] = 2 * 0.75 * 0.6
    assert nc.eta == pytest.approx(0.9, abs=1e-9)
    assert abs(nc.quotients[-1] - nc.eta) <= 1e-2 * abs(nc.eta)
    err = nc.errors
    assert all(b <= a + 1e-3 for a, b in zip(err, err[1:]))


def test_needle_rejects_misaligned(bang1d):
    with pytest.raises(ValueError):
        needle_derivative_fd(bang1d, const(bang1d, [0.0]), 0.25, [1.0], [0.01])
    with pytest.raises(ValueError):
        needle_derivative_fd(bang1d, const(bang1d, [0.0]), 0.25, [1.0], [1 / 64, 1 / 32])
    with pytest.raises(ValueError):
        needle_derivative_fd(bang1d, const(bang1d, [0.0]), 0.2501, [1.0], [1 / 64])
    with pytest.raises(ValueError):
        needle_variation(bang1d, const(bang1d, [0.0]), 0.9375, [1.0], 1 / 8)


def test_needle_variation_relaxed(bang1d):
    u = RelaxedControl.from_ordinary(const(bang1d, [0.0]))
    ue = needle_variation(bang1d, u, 0.5, [1.0], 1 / 32)
    assert [ue.mean(k)[0] for k in (31, 32, 33, 34)] == [0.0, 1.0, 1.0, 0.0]


def test_costate_zero(slab1d):
    g = adjoint_pair(slab1d, const(slab1d)).value.grid
    v = ValueField(g, slab1d.times, np.zeros((len(slab1d.times), g.size)))
    assert not np.any(adjoint_costate_field(v))


def test_costate_linear(linear1d):
    v = adjoint_pair(linear1d, const(linear1d), phi=CostFieldSpec(parse("x1 * step(5 - abs(x1))", 1))).value
    psi = adjoint_costate_field(v)
    x = v.grid.nodes[:, 0]
    inside = np.abs(x) < 4
    assert np.allclose(psi[0, inside, 0], -0.632121, atol=1e-6)
    assert np.allclose(psi[64, inside, 0], -(1 - np.exp(-0.5)), atol=1e-6)


def test_raw_form_agrees_on_smooth_instance(smooth_lq):
    p = smooth_lq
    pair = adjoint_pair(p, const(p, [0.0]))
    for t in (0.25, 0.5):
        a = hamiltonian_density(p, pair.value, pair.density, t, [1.0])
        b = hamiltonian_density(p, pair.value, pair.density, t, [1.0], form="raw")
        assert b == pytest.approx(a, abs=1e-6)


def test_pontryagin_reduction(smooth_lq):
    p = smooth_lq
    pair = adjoint_pair(p, const(p, [0.0]))
    for t, w in ((0.25, 1.0), (0.5, -0.5)):
        r = pontryagin_reduction_mc(p, pair.control, t, [w], N=100_000, seed=2, pair=pair)
        assert abs(r["estimate"] - r["grid_value"]) <= 3 * r["std_error"] + 1e-3
