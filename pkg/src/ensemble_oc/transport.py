"""Backward value operator ``L`` and forward density operator ``L*``.

Both operators are evaluated by the method of characteristics at grid nodes:

* ``apply_L``: ``v(x, t_j) = int_{t_j}^T phi(y^{x,t_j}(t), u(t), t) dt``, the
  solution of ``dv/ds + f . grad v = -phi``, ``v(., T) = 0``.
* ``apply_Lstar``: ``p(x, t) = rho_s(x0) exp(-int_s^t div f dtau)`` with
  ``x0`` the preimage of ``x`` under the flow from ``s`` to ``t``, the
  solution of ``dp/dt = -div(f p)``, ``p(., s) = rho_s``.

Mass whose characteristic leaves the box ``D`` is treated as absorbed: such
nodes get density 0 and the lost mass is reported as outflow.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .expr import evaluate
from .flow import DEFAULT_OVERSAMPLE, DEFAULT_SUBSTEPS, sweep_preimages, sweep_states, sweep_values
from .problem import Control, CostFieldSpec, InitialDensitySpec, Problem

__all__ = [
    "GridMismatchError",
    "SpatialGrid",
    "ValueField",
    "DensityGrid",
    "density_on_grid",
    "DensityFunction",
    "apply_L",
    "value_at",
    "apply_Lstar",
    "inner_product_H0",
    "l2_norm",
    "mass",
    "write_field_csv",
]

NEGATIVE_FLOOR = -1e-9


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Uniform tensor grid with trapezoid weights; nodes in C (lexicographic) order."""

    axes: tuple[np.ndarray, ...]

    @classmethod
    def from_box(cls, lo, hi, counts) -> "SpatialGrid":
        return cls(tuple(np.linspace(a, b, c) for a, b, c in zip(lo, hi, counts)))

    @classmethod
    def from_problem(cls, p: Problem) -> "SpatialGrid":
        return cls.from_box(p.domain_lo, p.domain_hi, p.grid)

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @cached_property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.ones(())
        for a in self.axes:
            wa = np.full(len(a), a[1] - a[0])
            wa[0] *= 0.5
            wa[-1] *= 0.5
            w = np.multiply.outer(w, wa)
        return w.ravel()

    @property
    def volume(self) -> float:
        return float(np.prod([a[-1] - a[0] for a in self.axes]))

    def same_as(self, other: "SpatialGrid") -> bool:
        return self.shape == other.shape and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes))

    def check(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[-1:] != (self.size,):
            raise GridMismatchError(f"field has {values.shape[-1:]} nodes, grid has {self.size}")
        return values

    def integrate(self, values) -> np.ndarray:
        return self.check(values) @ self.weights

    def gradient(self, values) -> np.ndarray:
        """Central differences (one-sided at the boundary), shape ``(..., N, n)``."""
        values = self.check(values)
        lead = values.shape[:-1]
        arr = values.reshape(lead + self.shape)
        off = len(lead)
        grads = np.gradient(arr, *self.spacing, axis=tuple(range(off, off + self.n)), edge_order=1)
        if self.n == 1:
            grads = [grads]
        return np.stack([g.reshape(lead + (self.size,)) for g in grads], axis=-1)

    def interpolator(self, values):
        """Multilinear interpolant of nodal ``values``, zero outside the box."""
        arr = self.check(values).reshape(self.shape)
        rgi = RegularGridInterpolator(self.axes, arr, method="linear", bounds_error=False, fill_value=0.0)
        return lambda x: rgi(np.asarray(x, dtype=float).reshape(-1, self.n)).reshape(np.shape(x)[:-1])

    def cell_integrals(self, values, cells) -> np.ndarray:
        """Exact integrals of the multilinear interpolant over ``cells`` per axis."""
        cells = (cells,) * self.n if np.isscalar(cells) else tuple(cells)
        arr = self.check(values).reshape(self.shape)
        for d, (a, c) in enumerate(zip(self.axes, cells)):
            edges = np.linspace(a[0], a[-1], c + 1)
            w = _hat_integrals(a, edges)
            arr = np.moveaxis(np.tensordot(w, arr, axes=([1], [d])), 0, d)
        return arr


def _hat_integrals(nodes: np.ndarray, edges: np.ndarray) -> np.ndarray:
    h = nodes[1] - nodes[0]

    def antider(z):
        r = np.clip((z[:, None] - nodes[None, :]) / h, -1.0, 1.0)
        return h * np.where(r <= 0, 0.5 * (r + 1) ** 2, 1.0 - 0.5 * (1 - r) ** 2)

    # hats of the end nodes are cut at the domain edge
    left = antider(np.clip(edges, nodes[0], nodes[-1]))
    return left[1:] - left[:-1]


@dataclass(frozen=True, eq=False)
class ValueField:
    """``values[j]`` holds ``v(., times[j])``; ``times`` runs from ``s`` to ``T``."""

    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray

    @property
    def s(self) -> float:
        return float(self.times[0])

    def index(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the field's mesh")
        return j

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Transported density on the grid, with per-time bookkeeping.

    ``outflow[j]`` is the initial mass whose characteristic has left ``D`` by
    ``times[j]``; ``mass + outflow`` should stay at the initial mass.
    """

    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray
    masses: np.ndarray
    outflow: np.ndarray
    absorbed_nodes: np.ndarray
    negative_nodes: int = 0
    initial_mass: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def s(self) -> float:
        return float(self.times[0])

    def index(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the density's mesh")
        return j

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]


class DensityFunction:
    """Normalized initial density: expression divided by its grid integral.

    Zero outside ``D``.  Calling evaluates exactly at arbitrary points.
    """

    def __init__(self, p: Problem, spec: InitialDensitySpec | None = None, grid: SpatialGrid | None = None):
        self.problem = p
        self.spec = p.rho0 if spec is None else spec
        self.grid = SpatialGrid.from_problem(p) if grid is None else grid
        raw = self._raw(self.grid.nodes)
        z = float(self.grid.integrate(raw))
        if not z > 0:
            raise ValueError("initial density has no mass on the grid")
        self.normalization = z

    def _raw(self, x):
        x = np.asarray(x, dtype=float)
        val = np.broadcast_to(evaluate(self.spec.expr, x), x.shape[:-1]).astype(float)
        inside = np.all((x >= self.problem.lo) & (x <= self.problem.hi), axis=-1)
        return np.where(inside, val, 0.0)

    def __call__(self, x) -> np.ndarray:
        return self._raw(x) / self.normalization

    @property
    def nodal(self) -> np.ndarray:
        return self(self.grid.nodes)


RhoSource = Union[InitialDensitySpec, DensityFunction, np.ndarray, None]


def density_on_grid(p: Problem, rho: RhoSource = None) -> np.ndarray:
    """Nodal values of a density source (spec, function or nodal array)."""
    if isinstance(rho, np.ndarray):
        return SpatialGrid.from_problem(p).check(rho)
    if isinstance(rho, DensityFunction):
        return rho.nodal
    return DensityFunction(p, rho).nodal


def as_cost(p: Problem, phi) -> CostFieldSpec:
    if phi is None:
        return p.phi
    if isinstance(phi, CostFieldSpec):
        return phi
    return CostFieldSpec(phi)


def apply_L(
    p: Problem,
    u: Control,
    phi=None,
    s: float = 0.0,
    substeps: int = DEFAULT_SUBSTEPS,
    oversample: int = DEFAULT_OVERSAMPLE,
) -> ValueField:
    """Value field ``v = L phi`` at every node and mesh time ``t_j >= s``."""
    grid = SpatialGrid.from_problem(p)
    js = p.time_index(s)
    starts = np.arange(js, p.time_steps + 1)
    values = sweep_values(p, u, grid.nodes, starts, as_cost(p, phi), substeps, oversample)
    return ValueField(grid, p.times[js:].copy(), values)


def value_at(
    p: Problem,
    u: Control,
    phi=None,
    s: float = 0.0,
    substeps: int = DEFAULT_SUBSTEPS,
    oversample: int = DEFAULT_OVERSAMPLE,
) -> np.ndarray:
    """Only the slice ``v(., s)`` of :func:`apply_L` (cheaper)."""
    grid = SpatialGrid.from_problem(p)
    js = p.time_index(s)
    return sweep_values(p, u, grid.nodes, [js], as_cost(p, phi), substeps, oversample)[0]


def apply_Lstar(
    p: Problem,
    u: Control,
    rho_s: RhoSource = None,
    s: float = 0.0,
    substeps: int = DEFAULT_SUBSTEPS,
) -> DensityGrid:
    """Density ``p = L*_s rho_s`` at every node and mesh time ``t_j >= s``.

    ``rho_s`` is evaluated exactly when it is an expression spec and by
    multilinear interpolation when it is a nodal array.
    """
    grid = SpatialGrid.from_problem(p)
    js = p.time_index(s)
    if isinstance(rho_s, np.ndarray):
        nodal = grid.check(rho_s)
        rho_fn = grid.interpolator(nodal)
    else:
        rho_fn = rho_s if isinstance(rho_s, DensityFunction) else DensityFunction(p, rho_s, grid)
        nodal = rho_fn.nodal
    ends = np.arange(js, p.time_steps + 1)
    x0, div, exited = sweep_preimages(p, u, grid.nodes, js, ends, substeps)
    with np.errstate(over="ignore"):
        values = np.where(exited, 0.0, rho_fn(x0) * np.exp(-div))
    values[0] = nodal

    _, _, gone = sweep_states(p, u, grid.nodes, js, substeps)
    weights = grid.weights
    outflow = (gone * (nodal * weights)).sum(axis=1)
    masses = values @ weights
    return DensityGrid(
        grid=grid,
        times=p.times[js:].copy(),
        values=values,
        masses=masses,
        outflow=outflow,
        absorbed_nodes=exited.sum(axis=1),
        negative_nodes=int(np.sum(values < NEGATIVE_FLOOR)),
        initial_mass=float(masses[0]),
    )


def inner_product_H0(a, b, grid: SpatialGrid) -> float:
    """Trapezoid approximation of ``int_D a b dx`` on nodal values."""
    a = grid.check(a)
    b = grid.check(b)
    if a.shape != b.shape:
        raise GridMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    # a * b first, so swapping the arguments is bitwise symmetric
    return float(np.sum(grid.weights * (a * b)))


def l2_norm(a, grid: SpatialGrid) -> float:
    return float(np.sqrt(inner_product_H0(a, a, grid)))


def mass(rho: DensityGrid, t: float | None = None) -> float:
    t = rho.s if t is None else t
    return float(rho.grid.integrate(rho.at(t)))


def write_field_csv(fld: ValueField | DensityGrid, path: str | Path) -> Path:
    """CSV rows ``(t, x1..xn, value)``, time-major then node order."""
    path = Path(path)
    nodes = fld.grid.nodes
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(fld.grid.n)] + ["value"])
        for t, row in zip(fld.times, fld.values):
            for x, val in zip(nodes, row):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(val))])
    return path
