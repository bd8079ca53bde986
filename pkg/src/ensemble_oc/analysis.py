"""Numerical checks of the integral estimate, duality and density claims.

Two independent routes to the ensemble cost are provided:

* :func:`ensemble_cost` pairs the value field ``v(., 0)`` with ``rho0`` on
  the grid (deterministic);
* :func:`monte_carlo_cost` averages the cost of sampled trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .flow import DEFAULT_SUBSTEPS, mixture_cost, mixture_divergence, sweep_states, sweep_values
from .problem import Control, InitialDensitySpec, Problem
from .reporting import write_csv
from .transport import (
    DensityFunction,
    SpatialGrid,
    apply_Lstar,
    density_on_grid,
    inner_product_H0,
    l2_norm,
    value_at,
    as_cost,
)

__all__ = [
    "SamplingError",
    "EstimateReport",
    "DualityReport",
    "DensityCheckReport",
    "MonteCarloCost",
    "delta_f",
    "estimate_constant",
    "verify_estimate",
    "verify_duality",
    "sample_density",
    "monte_carlo_cost",
    "ensemble_cost",
    "monte_carlo_density_check",
    "write_schedule_csv",
]

MC_BLOCK = 50_000


class SamplingError(RuntimeError):
    pass


@dataclass
class EstimateReport:
    s: float
    times: np.ndarray
    delta_f: np.ndarray  # grid-max values per mesh time
    phi_norms: np.ndarray
    constant: float
    lhs: float
    rhs: float
    tol_report: float
    delta_f_kind: str = "grid-max"

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def satisfied(self) -> bool:
        return self.margin >= -self.tol_report

    def to_dict(self):
        return {
            "s": self.s,
            "times": self.times,
            "delta_f": self.delta_f,
            "delta_f_kind": self.delta_f_kind,
            "phi_norms": self.phi_norms,
            "constant": self.constant,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "tol_report": self.tol_report,
            "satisfied": self.satisfied,
        }


@dataclass
class DualityReport:
    s: float
    lhs: float
    rhs: float
    bound: float = 0.0  # ||v(., s)|| ||rho_s||, the Cauchy-Schwarz bound on lhs

    @property
    def abs_gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def rel_gap(self) -> float:
        # sides below 1e-8 of their bound count as zero, not as scale
        scale = max(abs(self.lhs), abs(self.rhs), 1e-8 * self.bound)
        return self.abs_gap / scale if scale > 0 else 0.0

    def to_dict(self):
        return {
            "s": self.s,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "bound": self.bound,
            "abs_gap": self.abs_gap,
            "rel_gap": self.rel_gap,
        }


@dataclass
class DensityCheckReport:
    checkpoints: list[float]
    tv: list[float]
    samples: int
    seed: int
    cells: tuple[int, ...]
    acceptance_rate: float = 1.0

    def to_dict(self):
        return {
            "checkpoints": self.checkpoints,
            "tv": self.tv,
            "max_tv": max(self.tv) if self.tv else 0.0,
            "samples": self.samples,
            "seed": self.seed,
            "cells": list(self.cells),
            "acceptance_rate": self.acceptance_rate,
        }


@dataclass
class MonteCarloCost:
    estimate: float
    std_error: float
    samples: int
    seed: int
    acceptance_rate: float = 1.0
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.estimate
        yield self.std_error

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "samples": self.samples,
            "seed": self.seed,
            "acceptance_rate": self.acceptance_rate,
        }


# -- estimate -----------------------------------------------------------------


def delta_f(p: Problem, u: Control, t: float, interval: int | None = None, grid: SpatialGrid | None = None) -> float:
    """Half the largest ``|div f|`` over the grid nodes at time ``t``.

    This is a grid maximum, an under-approximation of the supremum over the
    whole space.  ``interval`` selects the control piece (default: the one
    containing ``t``).
    """
    grid = SpatialGrid.from_problem(p) if grid is None else grid
    k = p.interval_of(t) if interval is None else interval
    return 0.5 * float(np.max(np.abs(mixture_divergence(p, u, k, grid.nodes, t))))


def _interval_trapezoid(p: Problem, js: int, fn) -> tuple[float, np.ndarray]:
    """Sum over intervals ``k >= js`` of the trapezoid of ``fn(t, k)``.

    Both endpoint values use the control of interval ``k``.  Also returns
    nodal samples ``fn(t_j, interval_of(t_j))`` for reporting.
    """
    mesh = p.times
    total = 0.0
    for k in range(js, p.time_steps):
        total += 0.5 * (mesh[k + 1] - mesh[k]) * (fn(mesh[k], k) + fn(mesh[k + 1], k))
    samples = np.array([fn(mesh[j], p.interval_of(mesh[j])) for j in range(js, p.time_steps + 1)])
    return total, samples


def estimate_constant(p: Problem, u: Control, s: float = 0.0) -> float:
    """``exp int_s^T delta_f(t) dt`` with the trapezoid rule in time."""
    grid = SpatialGrid.from_problem(p)
    js = p.time_index(s)
    total, _ = _interval_trapezoid(p, js, lambda t, k: delta_f(p, u, t, k, grid))
    return float(np.exp(total))


def verify_estimate(p: Problem, u: Control, s: float = 0.0, phi=None, rel_tol: float = 1e-3) -> EstimateReport:
    """Compare ``||v(., s)||`` with ``c(s) int_s^T ||phi(., t)|| dt``."""
    phi = as_cost(p, phi)
    grid = SpatialGrid.from_problem(p)
    js = p.time_index(s)
    v = value_at(p, u, phi, s)
    lhs = l2_norm(v, grid)

    def phi_norm(t, k):
        return l2_norm(mixture_cost(p, u, k, grid.nodes, t, phi), grid)

    integral, norms = _interval_trapezoid(p, js, phi_norm)
    dint, deltas = _interval_trapezoid(p, js, lambda t, k: delta_f(p, u, t, k, grid))
    c = float(np.exp(dint))
    rhs = c * integral
    return EstimateReport(
        s=s,
        times=p.times[js:].copy(),
        delta_f=deltas,
        phi_norms=norms,
        constant=c,
        lhs=lhs,
        rhs=rhs,
        tol_report=rel_tol * rhs,
    )


def write_schedule_csv(report: EstimateReport, path: str | Path) -> Path:
    """CSV ``(t, phi_norm, delta_f)`` per mesh time."""
    rows = zip(report.times, report.phi_norms, report.delta_f)
    return write_csv(path, ["t", "phi_norm", "delta_f"], rows)


# -- duality ------------------------------------------------------------------


def verify_duality(p: Problem, u: Control, s: float = 0.0, rho_s=None, phi=None) -> DualityReport:
    """Both sides of ``(v(., s), rho_s) = int_s^T (phi(., t), p(., t)) dt``."""
    phi = as_cost(p, phi)
    grid = SpatialGrid.from_problem(p)
    js = p.time_index(s)
    dens = apply_Lstar(p, u, rho_s, s)
    v = value_at(p, u, phi, s)
    lhs = inner_product_H0(v, dens.values[0], grid)
    mesh = p.times
    rhs = 0.0
    for k in range(js, p.time_steps):
        a = inner_product_H0(mixture_cost(p, u, k, grid.nodes, mesh[k], phi), dens.values[k - js], grid)
        b = inner_product_H0(mixture_cost(p, u, k, grid.nodes, mesh[k + 1], phi), dens.values[k + 1 - js], grid)
        rhs += 0.5 * (mesh[k + 1] - mesh[k]) * (a + b)
    bound = l2_norm(v, grid) * l2_norm(dens.values[0], grid)
    return DualityReport(s, lhs, rhs, bound)


# -- sampling and Monte Carlo -------------------------------------------------


def sample_density(p: Problem, rho: InitialDensitySpec | None, count: int, rng: np.random.Generator):
    """Draw ``count`` points from the initial density truncated to ``D``.

    Product-normal densities use the exact inverse CDF per axis; anything
    else uses rejection sampling from the uniform law on ``D`` with the
    bound ``1.1 * max`` over grid nodes.  Returns ``(samples, acceptance)``.
    """
    rho = p.rho0 if rho is None else rho
    if rho.normal is not None:
        mean, sd = (np.asarray(a, dtype=float) for a in rho.normal)
        lo = norm.cdf((p.lo - mean) / sd)
        hi = norm.cdf((p.hi - mean) / sd)
        q = rng.uniform(lo, hi, size=(count, p.n))
        return mean + sd * norm.ppf(q), 1.0
    fn = DensityFunction(p, rho)
    bound = 1.1 * float(np.max(fn.nodal))
    out = []
    have = 0
    tried = 0
    while have < count:
        batch = max(1024, 2 * (count - have))
        x = rng.uniform(p.lo, p.hi, size=(batch, p.n))
        keep = rng.uniform(0.0, bound, size=batch) < fn(x)
        tried += batch
        out.append(x[keep])
        have += int(keep.sum())
        if tried >= 10_000 and have / tried < 1e-3:
            raise SamplingError(f"rejection sampler acceptance {have / tried:.2e} is below 1e-3")
    return np.concatenate(out)[:count], have / tried


def _block_rngs(seed: int, total: int, block: int):
    nblocks = -(-total // block)
    for b in range(nblocks):
        yield np.random.default_rng([seed, b]), min(block, total - b * block)


def monte_carlo_cost(
    p: Problem,
    u: Control,
    rho0: InitialDensitySpec | None = None,
    N: int = 100_000,
    seed: int = 0,
    phi=None,
    substeps: int = DEFAULT_SUBSTEPS,
    block: int = MC_BLOCK,
) -> MonteCarloCost:
    """Mean and standard error of the trajectory cost over ``N`` draws from ``rho0``."""
    if N < 100:
        raise ValueError("monte_carlo_cost needs N >= 100")
    phi = as_cost(p, phi)
    values = []
    acc = []
    for rng, count in _block_rngs(seed, N, block):
        x, a = sample_density(p, rho0, count, rng)
        acc.append(a)
        values.append(sweep_values(p, u, x, [0], phi, substeps)[0])
    vals = np.concatenate(values)
    se = float(np.std(vals, ddof=1) / np.sqrt(N))
    return MonteCarloCost(float(np.mean(vals)), se, N, seed, float(np.mean(acc)))


def ensemble_cost(p: Problem, u: Control, rho0=None, phi=None, substeps: int = DEFAULT_SUBSTEPS) -> float:
    """Grid route to the cost: ``(v(., 0), rho0)`` by trapezoid quadrature."""
    grid = SpatialGrid.from_problem(p)
    v = value_at(p, u, phi, 0.0, substeps)
    return inner_product_H0(v, density_on_grid(p, rho0), grid)


def monte_carlo_density_check(
    p: Problem,
    u: Control,
    rho0: InitialDensitySpec | None = None,
    N: int = 100_000,
    seed: int = 0,
    checkpoints=None,
    cells=None,
    substeps: int = DEFAULT_SUBSTEPS,
    block: int = MC_BLOCK,
) -> DensityCheckReport:
    """TV distance between sample histograms and cell integrals of ``L* rho0``."""
    if N < 10_000:
        raise ValueError("monte_carlo_density_check needs N >= 1e4")
    if checkpoints is None:
        checkpoints = [p.times[p.time_steps // 2], p.T]
    idx = [p.time_index(t) for t in checkpoints]
    if cells is None:
        cells = 64 if p.n == 1 else 32
    cells = (cells,) * p.n if np.isscalar(cells) else tuple(cells)
    dens = apply_Lstar(p, u, rho0, 0.0, substeps)
    edges = [np.linspace(a, b, c + 1) for a, b, c in zip(p.lo, p.hi, cells)]
    counts = {j: np.zeros(cells) for j in idx}
    acc = []
    for rng, count in _block_rngs(seed, N, block):
        x, a = sample_density(p, rho0, count, rng)
        acc.append(a)
        rec, states, gone = sweep_states(p, u, x, 0, substeps, record=sorted(set(idx)))
        for r, j in enumerate(rec):
            live = states[r][~gone[r]]
            h, _ = np.histogramdd(live, bins=edges)
            counts[int(j)] += h
    tv = []
    for j in idx:
        ints = dens.grid.cell_integrals(dens.values[j], cells)
        tv.append(0.5 * float(np.sum(np.abs(counts[j] / N - ints))))
    return DensityCheckReport([float(p.times[j]) for j in idx], tv, N, seed, cells, float(np.mean(acc)))
