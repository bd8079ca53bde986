"""Successive approximation driven by pointwise maximization of ``H``.

Each iteration computes ``rho`` and ``v`` for the incumbent, finds per mesh
interval the control point maximizing the endpoint-averaged ``H`` and moves
toward it. Steps are accepted only if the cost does not increase; otherwise
the step size ``beta`` shrinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import ensemble_cost
from .optimality import (
    DEFAULT_PER_AXIS,
    AdjointPair,
    OptimalityReport,
    adjoint_pair,
    check_maximum_condition,
    hamiltonian_table,
)
from .problem import (
    ConfigError,
    Control,
    ControlSignal,
    Problem,
    RelaxedControl,
    eval_cost,
    eval_vector_field,
)
from .reporting import write_csv, write_json
from .transport import as_cost

__all__ = [
    "OptimizerOptions",
    "IterationRecord",
    "OptimizationTrace",
    "ProjectionError",
    "PRUNE_WEIGHT",
    "interval_hamiltonians",
    "improve_once",
    "solve",
    "project_relaxed_to_ordinary",
    "check_affine_in_u",
    "write_control_csv",
    "write_trace_json",
]

PRUNE_WEIGHT = 1e-6
ACCEPT_TOL = 1e-12
MAX_SHRINKS = 8


class ProjectionError(ValueError):
    """Barycenter projection refused because the dynamics are not affine in ``u``."""


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 20
    tol: float = 1e-2
    beta0: float = 1.0
    shrink: float = 0.5
    per_axis: int = DEFAULT_PER_AXIS
    mode: str = "relaxed"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not 0.0 < self.beta0 <= 1.0:
            raise ConfigError("beta0 must lie in (0, 1]")
        if not 0.0 < self.shrink < 1.0:
            raise ConfigError("shrink must lie in (0, 1)")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.mode not in ("ordinary", "relaxed"):
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class IterationRecord:
    iteration: int
    phi: float
    worst_violation: float
    accepted: bool
    beta: float


@dataclass
class OptimizationTrace:
    records: list[IterationRecord]
    control: Control
    report: OptimalityReport
    converged: bool
    stop_reason: str
    options: OptimizerOptions

    @property
    def phi(self) -> float:
        accepted = [r.phi for r in self.records if r.accepted]
        return accepted[-1]

    @property
    def accepted_phis(self) -> list[float]:
        return [r.phi for r in self.records if r.accepted]

    def to_dict(self):
        return {
            "iterations": [vars(r) for r in self.records],
            "final_phi": self.phi,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "options": vars(self.options),
            "report": self.report.to_dict(),
        }


def interval_hamiltonians(p: Problem, pair: AdjointPair, controls) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per interval, ``H`` of each candidate averaged over the two endpoints.

    Returns ``(table (intervals, K), incumbent (intervals,), gain (intervals,))``
    where ``gain[k]`` is the larger endpoint excess of the best candidate
    over interval ``k``'s own measure, the quantity the grid check bounds.
    """
    nt = p.time_steps + 1
    node_table = np.stack([hamiltonian_table(p, pair, j, controls) for j in range(nt)])
    table = 0.5 * (node_table[:-1] + node_table[1:])
    best = node_table.max(axis=1)
    inc = np.empty(p.time_steps)
    gain = np.empty(p.time_steps)
    for k in range(p.time_steps):
        atoms, weights = pair.control.mixture(k)
        lo = float(weights @ hamiltonian_table(p, pair, k, atoms))
        hi = float(weights @ hamiltonian_table(p, pair, k + 1, atoms))
        inc[k] = 0.5 * (lo + hi)
        gain[k] = max(best[k] - lo, best[k + 1] - hi)
    return table, inc, gain


def _blend(atoms, weights, target, beta):
    """``(1 - beta) nu + beta delta_target`` with merging and pruning."""
    hit = np.flatnonzero(np.all(atoms == target, axis=1))
    w = (1.0 - beta) * weights
    if hit.size:
        w[hit[0]] += beta
        a = atoms
    else:
        a = np.vstack([atoms, target[None, :]])
        w = np.append(w, beta)
    keep = w >= PRUNE_WEIGHT
    a, w = a[keep], w[keep]
    return a, w / w.sum()


def improve_once(
    p: Problem,
    u: Control,
    rho0=None,
    beta: float = 1.0,
    opts: OptimizerOptions | None = None,
    phi=None,
    pair: AdjointPair | None = None,
) -> Control:
    """One maximization step from ``u``.

    An interval is left alone unless, at one of its endpoints, the best grid
    point beats the interval's own measure by more than ``opts.tol``; so a
    control passing the grid check is a fixed point, and a failing one has
    at least one interval to move. The target is the maximizer of the
    endpoint-averaged ``H``. In relaxed mode every improvable interval is
    blended toward its target with weight ``beta``. In ordinary mode ``beta``
    is read as the fraction of improvable intervals (largest gains first)
    that switch.
    """
    opts = opts or OptimizerOptions()
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    pair = adjoint_pair(p, u, rho0, phi) if pair is None else pair
    controls = p.delta.grid(opts.per_axis)
    table, _, gain = interval_hamiltonians(p, pair, controls)
    best = np.array([int(np.flatnonzero(row >= row.max() - 1e-12 * max(1.0, abs(row.max())))[0]) for row in table])
    improvable = np.flatnonzero(gain > opts.tol)
    if improvable.size == 0:
        return u

    if opts.mode == "ordinary":
        values = np.stack([u.mean(k) for k in range(p.time_steps)])
        count = max(1, math.ceil(beta * improvable.size))
        # stable sort keeps earlier intervals first among equal gains
        chosen = improvable[np.argsort(-gain[improvable], kind="stable")[:count]]
        values[chosen] = controls[best[chosen]]
        return ControlSignal(values)

    atoms, weights = [], []
    todo = set(improvable.tolist())
    for k in range(p.time_steps):
        a, w = u.mixture(k)
        a, w = np.array(a, dtype=float), np.array(w, dtype=float)
        if k in todo:
            a, w = _blend(a, w, controls[best[k]], beta)
        atoms.append(a)
        weights.append(w)
    return RelaxedControl(tuple(atoms), tuple(weights))


def _as_mode(u: Control, mode: str) -> Control:
    if mode == "relaxed" and isinstance(u, ControlSignal):
        return RelaxedControl.from_ordinary(u)
    return u


def solve(p: Problem, u0: Control | None = None, opts: OptimizerOptions | None = None, rho0=None, phi=None) -> OptimizationTrace:
    """Iterate :func:`improve_once` with monotone acceptance.

    Stops when the grid check passes (``converged``), after ``max_iters``
    iterations, when no interval can improve, or when ``MAX_SHRINKS``
    successive step reductions all fail to lower the cost.
    """
    opts = opts or OptimizerOptions()
    u = _as_mode(ControlSignal.constant(p) if u0 is None else u0, opts.mode)
    u.check(p)
    cost = ensemble_cost(p, u, rho0, phi)
    pair = adjoint_pair(p, u, rho0, phi)
    report = check_maximum_condition(p, u, opts.tol, opts.per_axis, pair=pair)
    records = [IterationRecord(0, cost, report.worst_violation, True, 0.0)]
    reason = "tolerance" if report.satisfied else "max_iters"

    it = 0
    while not report.satisfied and it < opts.max_iters:
        it += 1
        beta = opts.beta0
        moved = False
        for _ in range(MAX_SHRINKS + 1):
            cand = improve_once(p, u, rho0, beta, opts, phi, pair)
            if cand == u:
                break
            c = ensemble_cost(p, cand, rho0, phi)
            if c <= cost + ACCEPT_TOL:
                u, cost, moved = cand, c, True
                break
            records.append(IterationRecord(it, c, report.worst_violation, False, beta))
            beta *= opts.shrink
        if not moved:
            reason = "stalled"
            break
        pair = adjoint_pair(p, u, rho0, phi)
        report = check_maximum_condition(p, u, opts.tol, opts.per_axis, pair=pair)
        records.append(IterationRecord(it, cost, report.worst_violation, True, beta))
        if report.satisfied:
            reason = "tolerance"
    return OptimizationTrace(records, u, report, report.satisfied, reason, opts)


# -- barycenter projection ----------------------------------------------------


def check_affine_in_u(p: Problem, samples: int = 64, seed: int = 0, phi=None, rtol: float = 1e-10) -> tuple[bool, str]:
    """Midpoint test of affinity in ``u`` for ``f`` and ``phi`` on random ``(x, t, u1, u2)``."""
    if p.m == 0:
        return True, "no control"
    rng = np.random.default_rng(seed)
    x = rng.uniform(p.lo, p.hi, size=(samples, p.n))
    ts = rng.uniform(0.0, p.T, size=samples)
    u1 = p.delta.sample(rng, samples)
    u2 = p.delta.sample(rng, samples)
    phi = as_cost(p, phi)
    for i in range(samples):
        xi, t = x[i : i + 1], float(ts[i])
        um = 0.5 * (u1[i] + u2[i])
        for name, fn in (("f", lambda w: eval_vector_field(p.f, xi, w, t)), ("phi", lambda w: eval_cost(phi, xi, w, t))):
            mid, a, b = fn(um), fn(u1[i]), fn(u2[i])
            scale = 1.0 + np.max(np.abs([a, b]))
            if np.max(np.abs(mid - 0.5 * (a + b))) > rtol * scale:
                return False, f"{name} is not affine in u near x={xi[0].tolist()}, t={t:.6g}"
    return True, "ok"


def project_relaxed_to_ordinary(p: Problem, u: RelaxedControl, phi=None) -> ControlSignal:
    """Replace each interval's measure by its barycenter."""
    if p.delta.kind != "box":
        raise ProjectionError("barycenter projection needs a box control set")
    ok, why = check_affine_in_u(p, phi=phi)
    if not ok:
        raise ProjectionError(why)
    values = np.stack([p.delta.clamp(u.mean(k)) for k in range(u.intervals)])
    return ControlSignal(values)


# -- export -------------------------------------------------------------------


def write_control_csv(p: Problem, u: Control, path: str | Path) -> Path:
    """Ordinary: ``t_lo, t_hi, u1..um``. Relaxed: ``t_lo, t_hi, atom, u1..um, weight``."""
    t = p.times
    names = [f"u{i + 1}" for i in range(p.m)]
    if isinstance(u, ControlSignal):
        rows = ([t[k], t[k + 1], *u.values[k]] for k in range(u.intervals))
        return write_csv(path, ["t_lo", "t_hi", *names], rows)
    rows = (
        [t[k], t[k + 1], i, *a, w]
        for k in range(u.intervals)
        for i, (a, w) in enumerate(zip(*u.mixture(k)))
    )
    return write_csv(path, ["t_lo", "t_hi", "atom", *names, "weight"], rows)


def write_trace_json(trace: OptimizationTrace, path: str | Path) -> Path:
    return write_json(trace, path)
