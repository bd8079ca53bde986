"""First-order necessary condition for the ensemble control problem.

For a candidate control ``uh`` with density ``rho = L*_0[uh] rho0`` and
value ``v = L[uh] phi`` define, at each time ``t`` and control point ``w``::

    H(t, w) = int_D { v div(rho f(x, w, t)) - phi(x, w, t) rho } dx
            = -int_D rho f(x, w, t) . grad v dx - int_D phi(x, w, t) rho dx

(the second form after integration by parts, boundary terms dropped).
``eta(t, w) = H(t, uh(t)) - H(t, w)`` is the derivative of the cost along a
needle variation that switches to ``w`` on ``[t, t + eps]``, so an optimal
``uh`` has ``eta >= 0`` for all ``w`` at almost every ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import ensemble_cost, sample_density
from .flow import DEFAULT_SUBSTEPS, sweep_states
from .problem import Control, ControlSignal, Problem, RelaxedControl, eval_cost, eval_vector_field
from .reporting import write_csv
from .transport import (
    DensityGrid,
    SpatialGrid,
    ValueField,
    apply_L,
    apply_Lstar,
    as_cost,
)

__all__ = [
    "AdjointPair",
    "OptimalityReport",
    "NeedleCheck",
    "adjoint_pair",
    "hamiltonian_table",
    "hamiltonian_density",
    "control_hamiltonian",
    "eta",
    "check_maximum_condition",
    "needle_variation",
    "needle_derivative_fd",
    "adjoint_costate_field",
    "pontryagin_reduction_mc",
    "write_hamiltonian_csv",
]

DEFAULT_PER_AXIS = 21


@dataclass(frozen=True, eq=False)
class AdjointPair:
    """``v`` and ``rho`` for one control, with ``grad v`` cached."""

    control: Control
    value: ValueField
    density: DensityGrid
    grad_v: np.ndarray  # (times, N, n)
    phi: object


def adjoint_pair(p: Problem, u: Control, rho0=None, phi=None, substeps: int = DEFAULT_SUBSTEPS) -> AdjointPair:
    phi = as_cost(p, phi)
    value = apply_L(p, u, phi, 0.0, substeps)
    density = apply_Lstar(p, u, rho0, 0.0, substeps)
    return AdjointPair(u, value, density, value.grid.gradient(value.values), phi)


def _control_at(p: Problem, j: int) -> int:
    return min(j, p.time_steps - 1)


def _points(controls, m: int) -> np.ndarray:
    arr = np.asarray(controls, dtype=float)
    if arr.ndim == 2:
        return arr
    return arr.reshape(-1, m) if m else arr.reshape(1, 0)


def hamiltonian_table(p: Problem, pair: AdjointPair, j: int, controls) -> np.ndarray:
    """``H(t_j, w)`` for each row ``w`` of ``controls`` (shape ``(K, m)``)."""
    grid = pair.value.grid
    t = float(pair.value.times[j])
    rho = pair.density.values[j]
    wr = grid.weights * rho
    grad = pair.grad_v[j]
    controls = _points(controls, p.m)
    out = np.empty(len(controls))
    for i, w in enumerate(controls):
        fx = eval_vector_field(p.f, grid.nodes, w, t)
        transport = np.sum(wr * np.sum(fx * grad, axis=-1))
        cost = np.sum(wr * eval_cost(pair.phi, grid.nodes, w, t))
        out[i] = -transport - cost
    return out


def hamiltonian_density(
    p: Problem, vhat: ValueField, rhohat: DensityGrid, t: float, ubar, phi=None, form: str = "by_parts"
) -> float:
    """``H(t, ubar)`` from a value field and a density on the same grid and mesh.

    ``form="raw"`` differentiates ``rho f`` instead of ``v``; it is kept as a
    cross-check for smooth instances.
    """
    if not vhat.grid.same_as(rhohat.grid) or not np.allclose(vhat.times, rhohat.times):
        raise ValueError("value field and density must share grid and mesh")
    j = vhat.index(t)
    phi = as_cost(p, phi)
    grid = vhat.grid
    ubar = np.asarray(ubar, dtype=float).reshape(p.m)
    rho = rhohat.values[j]
    fx = eval_vector_field(p.f, grid.nodes, ubar, t)
    cost = np.sum(grid.weights * rho * eval_cost(phi, grid.nodes, ubar, t))
    if form == "raw":
        div = np.zeros(grid.size)
        for i in range(p.n):
            div += grid.gradient(rho * fx[:, i])[:, i]
        return float(np.sum(grid.weights * vhat.values[j] * div) - cost)
    if form != "by_parts":
        raise ValueError(f"unknown form {form!r}")
    grad = grid.gradient(vhat.values[j])
    return float(-np.sum(grid.weights * rho * np.sum(fx * grad, axis=-1)) - cost)


def control_hamiltonian(p: Problem, pair: AdjointPair, j: int, k: int | None = None) -> float:
    """``H(t_j, uh(t_j))``; a relaxed control enters linearly through its atoms."""
    k = _control_at(p, j) if k is None else k
    atoms, weights = pair.control.mixture(k)
    return float(weights @ hamiltonian_table(p, pair, j, atoms))


def eta(p: Problem, vhat: ValueField, rhohat: DensityGrid, t: float, ubar, uhat_t, phi=None) -> float:
    """``H(t, uhat_t) - H(t, ubar)``; ``uhat_t`` is a point or ``(atoms, weights)``."""
    if isinstance(uhat_t, tuple) and len(uhat_t) == 2 and np.ndim(uhat_t[1]) == 1 and np.ndim(uhat_t[0]) == 2:
        atoms, weights = uhat_t
    else:
        atoms, weights = np.asarray(uhat_t, dtype=float).reshape(1, p.m), np.ones(1)
    h_hat = sum(w * hamiltonian_density(p, vhat, rhohat, t, a, phi) for a, w in zip(atoms, weights))
    # comparing a control with itself must give exactly zero
    if len(weights) == 1 and np.array_equal(np.asarray(atoms[0]).reshape(p.m), np.asarray(ubar, float).reshape(p.m)):
        return 0.0
    return float(h_hat - hamiltonian_density(p, vhat, rhohat, t, ubar, phi))


@dataclass
class OptimalityReport:
    times: np.ndarray
    controls: np.ndarray  # (K, m) candidate grid
    table: np.ndarray  # (times, K) H values
    h_hat: np.ndarray
    h_max: np.ndarray
    argmax: np.ndarray  # (times, m)
    eta_min: np.ndarray
    tol: float
    extra: dict = field(default_factory=dict)

    @property
    def violating(self) -> np.ndarray:
        return self.eta_min < -self.tol

    @property
    def violating_fraction(self) -> float:
        return float(np.mean(self.violating))

    @property
    def worst_violation(self) -> float:
        return float(np.min(self.eta_min))

    @property
    def worst_index(self) -> int:
        return int(np.argmin(self.eta_min))

    @property
    def satisfied(self) -> bool:
        return not np.any(self.violating)

    def to_dict(self):
        j = self.worst_index
        return {
            "times": self.times,
            "h_hat": self.h_hat,
            "h_max": self.h_max,
            "argmax": self.argmax,
            "eta_min": self.eta_min,
            "worst_violation": self.worst_violation,
            "worst_time": float(self.times[j]),
            "worst_control": self.argmax[j],
            "violating_times": self.times[self.violating],
            "violating_fraction": self.violating_fraction,
            "tol": self.tol,
            "satisfied": self.satisfied,
        }


def _first_max(values: np.ndarray) -> int:
    """Index of the lexicographically first (lowest index) maximizer."""
    top = np.max(values)
    slack = 1e-12 * max(1.0, abs(top))
    return int(np.flatnonzero(values >= top - slack)[0])


def check_maximum_condition(
    p: Problem,
    uhat: Control,
    tol: float = 1e-2,
    per_axis: int = DEFAULT_PER_AXIS,
    rho0=None,
    phi=None,
    pair: AdjointPair | None = None,
) -> OptimalityReport:
    """Scan ``H(t_j, w)`` over a lattice of ``Delta`` at every mesh time."""
    pair = adjoint_pair(p, uhat, rho0, phi) if pair is None else pair
    controls = p.delta.grid(per_axis)
    nt = len(pair.value.times)
    table = np.empty((nt, len(controls)))
    h_hat = np.empty(nt)
    h_max = np.empty(nt)
    argmax = np.empty((nt, p.m))
    for j in range(nt):
        table[j] = hamiltonian_table(p, pair, j, controls)
        h_hat[j] = control_hamiltonian(p, pair, j)
        i = _first_max(table[j])
        h_max[j] = table[j, i]
        argmax[j] = controls[i]
    # the incumbent competes too, so eta_min <= 0 always
    h_max = np.maximum(h_max, h_hat)
    eta_min = h_hat - h_max
    return OptimalityReport(pair.value.times.copy(), controls, table, h_hat, h_max, argmax, eta_min, tol)


def write_hamiltonian_csv(report: OptimalityReport, path: str | Path) -> Path:
    """CSV ``(t, u1..um, H)`` of the full scan."""
    m = report.controls.shape[1]
    rows = (
        [t, *c, h]
        for t, row in zip(report.times, report.table)
        for c, h in zip(report.controls, row)
    )
    return write_csv(path, ["t"] + [f"u{i + 1}" for i in range(m)] + ["H"], rows)


# -- needle variations --------------------------------------------------------


@dataclass
class NeedleCheck:
    tbar: float
    ubar: np.ndarray
    eps: list[float]
    quotients: list[float]
    eta: float
    phi_hat: float

    @property
    def errors(self) -> list[float]:
        return [abs(q - self.eta) for q in self.quotients]

    def to_dict(self):
        return {
            "tbar": self.tbar,
            "ubar": self.ubar,
            "eps": self.eps,
            "quotients": self.quotients,
            "eta": self.eta,
            "errors": self.errors,
            "phi_hat": self.phi_hat,
        }


def _steps_of(p: Problem, eps: float) -> int:
    r = eps / p.dt
    k = int(round(r))
    if k < 1 or abs(r - k) > 1e-9 * max(1.0, r):
        raise ValueError(f"needle width {eps} is not a multiple of the mesh step {p.dt}")
    return k


def needle_variation(p: Problem, uhat: Control, tbar: float, ubar, eps: float) -> Control:
    """``uhat`` overwritten by ``ubar`` on ``[tbar, tbar + eps]``."""
    j = p.time_index(tbar)
    width = _steps_of(p, eps)
    if j + width > p.time_steps:
        raise ValueError("needle extends past the horizon")
    ubar = np.asarray(ubar, dtype=float).reshape(p.m)
    if isinstance(uhat, ControlSignal):
        values = uhat.values.copy()
        values[j : j + width] = ubar
        return ControlSignal(values)
    atoms = list(uhat.atoms)
    weights = list(uhat.weights)
    for k in range(j, j + width):
        atoms[k] = ubar[None, :]
        weights[k] = np.ones(1)
    return RelaxedControl(tuple(atoms), tuple(weights))


def needle_derivative_fd(
    p: Problem, uhat: Control, tbar: float, ubar, eps_list, rho0=None, phi=None, pair: AdjointPair | None = None
) -> NeedleCheck:
    """Finite-difference quotients of the cost along needle variations, with ``eta``."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps values must be strictly decreasing")
    j = p.time_index(tbar)
    pair = adjoint_pair(p, uhat, rho0, phi) if pair is None else pair
    ubar = np.asarray(ubar, dtype=float).reshape(p.m)
    base = ensemble_cost(p, uhat, rho0, phi)
    quotients = []
    for e in eps_list:
        ue = needle_variation(p, uhat, tbar, ubar, e)
        quotients.append((ensemble_cost(p, ue, rho0, phi) - base) / e)
    atoms, weights = uhat.mixture(_control_at(p, j))
    eta_val = eta(p, pair.value, pair.density, float(p.times[j]), ubar, (atoms, weights), pair.phi)
    return NeedleCheck(float(tbar), ubar, eps_list, quotients, eta_val, base)


# -- costate ------------------------------------------------------------------


def adjoint_costate_field(vhat: ValueField) -> np.ndarray:
    """``psi = -grad v`` at every node and time, shape ``(times, N, n)``."""
    return -vhat.grid.gradient(vhat.values)


def pontryagin_reduction_mc(
    p: Problem,
    uhat: Control,
    t: float,
    ubar,
    N: int = 100_000,
    seed: int = 0,
    rho0=None,
    phi=None,
    pair: AdjointPair | None = None,
) -> dict:
    """Smooth-case form of ``H(t, ubar) - H(t, uhat(t))`` as an expectation.

    Estimates ``E{psi^T (f(y, ubar) - f(y, uhat)) - (phi(y, ubar) - phi(y, uhat))}``
    with ``y`` the ensemble state at ``t`` and ``psi = -grad v`` interpolated
    at ``y``; returns it next to the grid value.
    """
    pair = adjoint_pair(p, uhat, rho0, phi) if pair is None else pair
    j = p.time_index(t)
    k = _control_at(p, j)
    ubar = np.asarray(ubar, dtype=float).reshape(p.m)
    rng = np.random.default_rng([seed, 0])
    x, _ = sample_density(p, rho0, N, rng)
    _, states, gone = sweep_states(p, uhat, x, 0, record=[j])
    y = states[0][~gone[0]]
    grid = pair.value.grid
    psi = np.stack([grid.interpolator(-pair.grad_v[j][:, i])(y) for i in range(p.n)], axis=-1)
    atoms, weights = uhat.mixture(k)
    f_bar = eval_vector_field(p.f, y, ubar, t)
    c_bar = eval_cost(pair.phi, y, ubar, t)
    f_hat = sum(w * eval_vector_field(p.f, y, a, t) for a, w in zip(atoms, weights))
    c_hat = sum(w * eval_cost(pair.phi, y, a, t) for a, w in zip(atoms, weights))
    sample = np.sum(psi * (f_bar - f_hat), axis=-1) - (c_bar - c_hat)
    # samples absorbed at the boundary contribute zero
    full = np.zeros(N)
    full[: len(sample)] = sample
    grid_value = float(hamiltonian_table(p, pair, j, ubar[None, :])[0] - control_hamiltonian(p, pair, j))
    return {
        "estimate": float(np.mean(full)),
        "std_error": float(np.std(full, ddof=1) / np.sqrt(N)),
        "grid_value": grid_value,
    }
