"""Problem definitions: dynamics, running cost, initial density, controls.

A :class:`Problem` bundles everything the solvers need::

    dy/dt = f(y, u(t), t),  y(0) ~ rho0,
    cost  = E int_0^T phi(y(t), u(t), t) dt  ->  min over u(.) with values in Delta.

Everything lives on a truncated axis-aligned box ``D`` discretized by a
uniform tensor grid, and on a uniform time mesh of ``time_steps`` intervals.
Controls are piecewise constant on that mesh, either ordinary
(:class:`ControlSignal`) or relaxed (:class:`RelaxedControl`, one atomic
probability measure on ``Delta`` per interval).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence, Union

import numpy as np

from .expr import Expr, evaluate, functions_used, parse_field_expression, to_text

__all__ = [
    "ConfigError",
    "EvaluationError",
    "ControlSet",
    "VectorFieldSpec",
    "CostFieldSpec",
    "InitialDensitySpec",
    "Problem",
    "ControlSignal",
    "RelaxedControl",
    "Control",
    "ValidationReport",
    "eval_vector_field",
    "eval_divergence",
    "relax_vector_field",
    "eval_cost",
    "validate_problem",
    "problem_from_dict",
    "problem_to_dict",
    "control_from_dict",
    "control_to_dict",
    "load_problem",
]

WEIGHT_TOL = 1e-12
_NONSMOOTH = {"abs", "sign", "step", "min", "max"}


class ConfigError(ValueError):
    """Malformed problem or control configuration."""


class EvaluationError(ArithmeticError):
    """A field expression produced a non-finite value."""


@dataclass(frozen=True)
class ControlSet:
    """The admissible control values ``Delta``.

    ``kind="box"`` uses ``lo``/``hi``; ``kind="finite"`` lists ``points``.
    A problem without controls (``m == 0``) uses the finite set holding the
    single empty point.
    """

    kind: str
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()
    points: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.kind == "box":
            if len(self.lo) != len(self.hi) or not self.lo:
                raise ConfigError("box control set needs lo and hi of equal nonzero length")
            if any(a > b for a, b in zip(self.lo, self.hi)):
                raise ConfigError("box control set has lo > hi")
        elif self.kind == "finite":
            if not self.points:
                raise ConfigError("finite control set must be nonempty")
            if len({len(p) for p in self.points}) != 1:
                raise ConfigError("finite control points have mixed lengths")
            if len(set(self.points)) != len(self.points):
                raise ConfigError("finite control set has duplicates")
        else:
            raise ConfigError(f"unknown control set kind {self.kind!r}")

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> "ControlSet":
        return cls("box", tuple(map(float, lo)), tuple(map(float, hi)))

    @classmethod
    def finite(cls, points: Sequence[Sequence[float]]) -> "ControlSet":
        return cls("finite", points=tuple(tuple(map(float, p)) for p in points))

    @classmethod
    def trivial(cls) -> "ControlSet":
        return cls("finite", points=((),))

    @property
    def dim(self) -> int:
        return len(self.lo) if self.kind == "box" else len(self.points[0])

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.dim:
            return False
        if self.kind == "box":
            return bool(np.all(u >= np.asarray(self.lo) - tol) and np.all(u <= np.asarray(self.hi) + tol))
        pts = np.asarray(self.points, dtype=float).reshape(len(self.points), self.dim)
        return bool(np.any(np.all(np.abs(pts - u) <= tol, axis=1)))

    def grid(self, per_axis: int = 21) -> np.ndarray:
        """Lattice of candidate controls, shape ``(K, m)``, lexicographically sorted."""
        if self.kind == "finite":
            pts = np.asarray(self.points, dtype=float).reshape(len(self.points), self.dim)
            order = np.lexsort(pts.T[::-1]) if self.dim else np.arange(len(pts))
            return pts[order]
        axes = [
            np.linspace(a, b, per_axis) if b > a else np.array([a])
            for a, b in zip(self.lo, self.hi)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def default_point(self) -> np.ndarray:
        if self.kind == "box":
            return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))
        return np.asarray(self.points[0], dtype=float)

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if self.kind == "box":
            return rng.uniform(self.lo, self.hi, size=(k, self.dim))
        pts = np.asarray(self.points, dtype=float).reshape(len(self.points), self.dim)
        return pts[rng.integers(len(pts), size=k)]

    def clamp(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind != "box":
            return u
        return np.clip(u, self.lo, self.hi)


@dataclass(frozen=True)
class VectorFieldSpec:
    components: tuple[Expr, ...]
    divergence: Expr | None = None
    jacobian: tuple[tuple[Expr, ...], ...] | None = None

    @property
    def nonsmooth_functions(self) -> set[str]:
        used = set()
        for c in self.components:
            used |= functions_used(c)
        return used & _NONSMOOTH


@dataclass(frozen=True)
class CostFieldSpec:
    expr: Expr
    majorant: Expr | None = None


@dataclass(frozen=True)
class InitialDensitySpec:
    """Initial density ``rho0`` as an expression in ``x``.

    ``normal`` optionally records ``(mean, sd)`` per axis when the expression
    is a product of normal densities; samplers then use the exact inverse
    CDF instead of rejection sampling.
    """

    expr: Expr
    normal: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    @classmethod
    def gaussian(cls, mean: Sequence[float], sd: Sequence[float]) -> "InitialDensitySpec":
        mean = tuple(map(float, mean))
        sd = tuple(map(float, sd))
        text = " * ".join(
            f"exp(-0.5 * ((x{i + 1} - ({mu!r})) / {s!r})^2)" for i, (mu, s) in enumerate(zip(mean, sd))
        )
        return cls(parse_field_expression(text, len(mean)), normal=(mean, sd))


@dataclass(frozen=True)
class Problem:
    """An ensemble optimal-control problem on a truncated box.

    ``grid`` is the number of nodes per axis; ``time_steps`` the number of
    uniform intervals on ``[0, T]``.
    """

    n: int
    m: int
    f: VectorFieldSpec
    phi: CostFieldSpec
    rho0: InitialDensitySpec
    delta: ControlSet
    T: float
    domain_lo: tuple[float, ...]
    domain_hi: tuple[float, ...]
    grid: tuple[int, ...]
    time_steps: int
    name: str = "custom"

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("state dimension n must be >= 1")
        if not self.T > 0:
            raise ConfigError("horizon T must be positive")
        if len(self.domain_lo) != self.n or len(self.domain_hi) != self.n or len(self.grid) != self.n:
            raise ConfigError("domain and grid must have n entries")
        if any(not b > a for a, b in zip(self.domain_lo, self.domain_hi)):
            raise ConfigError("domain box is degenerate")
        if any(g < 8 for g in self.grid):
            raise ConfigError("grid needs at least 8 nodes per axis")
        if self.time_steps < 4:
            raise ConfigError("time_steps must be >= 4")
        if len(self.f.components) != self.n:
            raise ConfigError("f must have n components")
        if self.delta.dim != self.m:
            raise ConfigError(f"control set has dimension {self.delta.dim}, expected m={self.m}")

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.time_steps + 1)

    @property
    def dt(self) -> float:
        return self.T / self.time_steps

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.domain_lo, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.domain_hi, dtype=float)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def safety_box(self) -> tuple[np.ndarray, np.ndarray]:
        """The domain inflated by a factor 2 about its center."""
        c = 0.5 * (self.lo + self.hi)
        r = self.hi - self.lo
        return c - r, c + r

    def time_index(self, t: float, tol: float = 1e-9) -> int:
        """Index of mesh time ``t``; raises if ``t`` is not on the mesh."""
        k = int(round(t / self.dt))
        if not 0 <= k <= self.time_steps or abs(k * self.dt - t) > tol * max(1.0, self.T):
            raise ValueError(f"time {t} is not on the mesh (dt={self.dt})")
        return k

    def interval_of(self, t: float) -> int:
        """Interval containing ``t`` (right-continuous, ``T`` maps to the last)."""
        k = int(np.floor(t / self.dt + 1e-9))
        return min(max(k, 0), self.time_steps - 1)

    def replace(self, **changes) -> "Problem":
        from dataclasses import replace

        return replace(self, **changes)


# -- controls -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Ordinary piecewise-constant control: ``values[k]`` on interval ``k``."""

    values: np.ndarray  # (time_steps, m)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ConfigError("control values must have shape (time_steps, m)")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, problem: Problem, value=None) -> "ControlSignal":
        if value is None:
            value = problem.delta.default_point()
        value = np.asarray(value, dtype=float).reshape(problem.m)
        return cls(np.tile(value, (problem.time_steps, 1)))

    @property
    def intervals(self) -> int:
        return self.values.shape[0]

    def mixture(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.values[k][None, :], np.ones(1)

    def mean(self, k: int) -> np.ndarray:
        return self.values[k]

    def check(self, problem: Problem):
        if self.values.shape != (problem.time_steps, problem.m):
            raise ConfigError(
                f"control has shape {self.values.shape}, expected {(problem.time_steps, problem.m)}"
            )
        for k, v in enumerate(self.values):
            if not problem.delta.contains(v, tol=1e-9):
                raise ConfigError(f"control value {v.tolist()} on interval {k} is outside Delta")

    def __eq__(self, other):
        return isinstance(other, ControlSignal) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class RelaxedControl:
    """Relaxed control: per interval, atoms ``(k_i, m)`` with weights ``(k_i,)``."""

    atoms: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        atoms = tuple(np.asarray(a, dtype=float) for a in self.atoms)
        weights = tuple(np.asarray(w, dtype=float).reshape(-1) for w in self.weights)
        if len(atoms) != len(weights):
            raise ConfigError("atoms and weights must have one entry per interval")
        for k, (a, w) in enumerate(zip(atoms, weights)):
            if a.ndim != 2 or a.shape[0] != w.size or w.size == 0:
                raise ConfigError(f"interval {k}: atoms/weights shape mismatch")
            if np.any(w < 0):
                raise ConfigError(f"interval {k}: negative weight")
            if abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ConfigError(f"interval {k}: weights sum to {w.sum():.15g}, not 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_ordinary(cls, u: ControlSignal) -> "RelaxedControl":
        return cls(tuple(v[None, :] for v in u.values), tuple(np.ones(1) for _ in u.values))

    @property
    def intervals(self) -> int:
        return len(self.atoms)

    def mixture(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.atoms[k], self.weights[k]

    def mean(self, k: int) -> np.ndarray:
        return self.weights[k] @ self.atoms[k]

    def check(self, problem: Problem):
        if self.intervals != problem.time_steps:
            raise ConfigError(f"relaxed control has {self.intervals} intervals, expected {problem.time_steps}")
        for k, a in enumerate(self.atoms):
            if a.shape[1] != problem.m:
                raise ConfigError(f"interval {k}: atoms have dimension {a.shape[1]}, expected {problem.m}")
            for v in a:
                if not problem.delta.contains(v, tol=1e-9):
                    raise ConfigError(f"atom {v.tolist()} on interval {k} is outside Delta")

    def __eq__(self, other):
        return (
            isinstance(other, RelaxedControl)
            and self.intervals == other.intervals
            and all(np.array_equal(a, b) for a, b in zip(self.atoms, other.atoms))
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
        )


Control = Union[ControlSignal, RelaxedControl]


# -- field evaluation ---------------------------------------------------------


def _finite_or_raise(value, what: str):
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"non-finite value in {what}")
    return value


def eval_vector_field(f: VectorFieldSpec, x, u=None, t: float = 0.0, check: bool = True) -> np.ndarray:
    """Evaluate ``f(x, u, t)``; ``x`` has shape ``(..., n)``, result likewise."""
    x = np.asarray(x, dtype=float)
    u = np.zeros(0) if u is None else np.asarray(u, dtype=float)
    out = np.empty(x.shape, dtype=float)
    for i, comp in enumerate(f.components):
        val = np.broadcast_to(evaluate(comp, x, u, t), x.shape[:-1])
        if check:
            _finite_or_raise(val, f"component f{i + 1}")
        out[..., i] = val
    return out


def eval_divergence(f: VectorFieldSpec, x, u=None, t: float = 0.0, h_div: float | None = None) -> np.ndarray:
    """``sum_i df_i/dx_i``: analytic when supplied, else central differences."""
    x = np.asarray(x, dtype=float)
    u = np.zeros(0) if u is None else np.asarray(u, dtype=float)
    if f.divergence is not None and h_div is None:
        val = np.broadcast_to(evaluate(f.divergence, x, u, t), x.shape[:-1]).astype(float)
        return _finite_or_raise(val, "divergence")
    return fd_divergence(f, x, u, t, h_div)


def fd_divergence(f: VectorFieldSpec, x, u, t, h_div: float | None) -> np.ndarray:
    if h_div is None:
        raise ValueError("h_div is required without an analytic divergence")
    if not h_div > 0:
        raise ValueError("h_div must be positive")
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape[:-1])
    for i, comp in enumerate(f.components):
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += h_div
        xm[..., i] -= h_div
        d = (evaluate(comp, xp, u, t) - evaluate(comp, xm, u, t)) / (2 * h_div)
        total = total + d
    return _finite_or_raise(total, "divergence")


def relax_vector_field(f: VectorFieldSpec, x, atoms, weights, t: float = 0.0) -> np.ndarray:
    """Mixture field ``sum_k w_k f(x, u_k, t)``."""
    x = np.asarray(x, dtype=float)
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    atoms = atoms.reshape(weights.size, -1)
    out = np.zeros(x.shape)
    for a, w in zip(atoms, weights):
        out += w * eval_vector_field(f, x, a, t)
    return out


def eval_cost(phi: CostFieldSpec | Expr, x, u=None, t: float = 0.0) -> np.ndarray:
    expr = phi.expr if isinstance(phi, CostFieldSpec) else phi
    x = np.asarray(x, dtype=float)
    u = np.zeros(0) if u is None else np.asarray(u, dtype=float)
    return np.broadcast_to(evaluate(expr, x, u, t), x.shape[:-1]).astype(float)


# -- validation ---------------------------------------------------------------


@dataclass
class ValidationReport:
    lipschitz_x: float
    lipschitz_u: float
    sup_f: float
    divergence_discrepancy: float | None
    k0_estimate: float
    rho0_min: float
    rho0_grid_integral: float
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "lipschitz_x": self.lipschitz_x,
            "lipschitz_u": self.lipschitz_u,
            "sup_f": self.sup_f,
            "divergence_discrepancy": self.divergence_discrepancy,
            "k0_estimate": self.k0_estimate,
            "rho0_min": self.rho0_min,
            "rho0_grid_integral": self.rho0_grid_integral,
            "errors": list(self.errors),
            "warnings": list(self.warnings),
        }


def validate_problem(p: Problem, samples: int = 256, seed: int = 0, div_tol: float = 1e-6) -> ValidationReport:
    """Sampled estimates of the standing assumptions on ``f`` and ``phi``.

    Nothing here is a hard gate except a negative or massless ``rho0``;
    Lipschitz and boundedness numbers are empirical lower estimates.
    """
    from .transport import SpatialGrid

    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    errors: list[str] = []
    warnings: list[str] = []

    x1 = rng.uniform(p.lo, p.hi, size=(samples, p.n))
    x2 = rng.uniform(p.lo, p.hi, size=(samples, p.n))
    ts = rng.uniform(0.0, p.T, size=samples)
    us = p.delta.sample(rng, samples)
    us2 = p.delta.sample(rng, samples)

    lip_x = 0.0
    lip_u = 0.0
    sup_f = 0.0
    disc = 0.0 if p.f.divergence is not None else None
    h_div = 1e-4 * p.diameter
    for i in range(samples):
        fa = eval_vector_field(p.f, x1[i], us[i], ts[i])
        fb = eval_vector_field(p.f, x2[i], us[i], ts[i])
        dx = np.linalg.norm(x1[i] - x2[i])
        if dx > 0:
            lip_x = max(lip_x, float(np.linalg.norm(fa - fb) / dx))
        du = np.linalg.norm(us[i] - us2[i])
        if du > 0:
            fc = eval_vector_field(p.f, x1[i], us2[i], ts[i])
            lip_u = max(lip_u, float(np.linalg.norm(fa - fc) / du))
        sup_f = max(sup_f, float(np.linalg.norm(fa)), float(np.linalg.norm(fb)))
        if disc is not None:
            an = float(eval_divergence(p.f, x1[i], us[i], ts[i]))
            fd = float(fd_divergence(p.f, x1[i], us[i], ts[i], h_div))
            disc = max(disc, abs(an - fd))
    if disc is not None and disc > div_tol:
        warnings.append(f"analytic divergence differs from finite differences by {disc:.3g}")
    nonsmooth = p.f.nonsmooth_functions
    if nonsmooth:
        warnings.append(
            "f uses " + ", ".join(sorted(nonsmooth)) + "; second x-derivatives may not exist"
        )

    grid = SpatialGrid.from_problem(p)
    k0 = 0.0
    tmesh = p.times
    for u in p.delta.sample(rng, min(samples, 16)):
        norms = [
            np.sqrt(grid.integrate(eval_cost(p.phi, grid.nodes, u, t) ** 2)) for t in tmesh
        ]
        k0 = max(k0, float(np.trapezoid(norms, tmesh)))
    if p.phi.majorant is not None:
        for u, t in zip(us[:16], ts[:16]):
            excess = np.abs(eval_cost(p.phi, grid.nodes, u, t)) - eval_cost(p.phi.majorant, grid.nodes, u, t)
            if np.max(excess) > 1e-12:
                warnings.append("cost exceeds its majorant at sampled points")
                break

    rho = np.asarray(evaluate(p.rho0.expr, grid.nodes), dtype=float)
    rho = np.broadcast_to(rho, grid.nodes.shape[:-1])
    rho_min = float(np.min(rho))
    integral = float(grid.integrate(rho))
    if rho_min < 0:
        errors.append(f"initial density is negative at grid nodes (min {rho_min:.3g})")
    if not integral > 0 or not np.isfinite(integral):
        errors.append("initial density has no mass on the grid")

    return ValidationReport(
        lipschitz_x=lip_x,
        lipschitz_u=lip_u,
        sup_f=sup_f,
        divergence_discrepancy=disc,
        k0_estimate=k0,
        rho0_min=rho_min,
        rho0_grid_integral=integral,
        errors=errors,
        warnings=warnings,
    )


# -- config -------------------------------------------------------------------


def _expr(text: Any, n: int, m: int, where: str) -> Expr:
    if not isinstance(text, str):
        raise ConfigError(f"{where}: expected an expression string")
    try:
        return parse_field_expression(text, n, m)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def problem_from_dict(d: dict) -> Problem:
    """Build a :class:`Problem` from its JSON form."""
    try:
        n = int(d["n"])
        m = int(d.get("m", 0))
        fd = d["f"]
        comps = tuple(_expr(c, n, m, f"f.components[{i}]") for i, c in enumerate(fd["components"]))
        div = _expr(fd["divergence"], n, m, "f.divergence") if fd.get("divergence") else None
        jac = None
        if fd.get("jacobian"):
            jac = tuple(
                tuple(_expr(c, n, m, f"f.jacobian[{i}][{j}]") for j, c in enumerate(row))
                for i, row in enumerate(fd["jacobian"])
            )
        phid = d["phi"]
        phi = CostFieldSpec(
            _expr(phid["expr"], n, m, "phi.expr"),
            _expr(phid["majorant"], n, 0, "phi.majorant") if phid.get("majorant") else None,
        )
        rd = d["rho0"]
        if "normal" in rd:
            mean, sd = rd["normal"]["mean"], rd["normal"]["sd"]
            rho0 = InitialDensitySpec.gaussian(mean, sd)
        else:
            rho0 = InitialDensitySpec(_expr(rd["expr"], n, 0, "rho0.expr"))
        dd = d.get("delta", {"kind": "finite", "points": [[]]})
        if dd["kind"] == "box":
            delta = ControlSet.box(dd["lo"], dd["hi"])
        else:
            delta = ControlSet.finite(dd["points"])
        dom = d["domain"]
        return Problem(
            n=n,
            m=m,
            f=VectorFieldSpec(comps, div, jac),
            phi=phi,
            rho0=rho0,
            delta=delta,
            T=float(d["T"]),
            domain_lo=tuple(map(float, dom["lo"])),
            domain_hi=tuple(map(float, dom["hi"])),
            grid=tuple(int(g) for g in d["grid"]),
            time_steps=int(d["time_steps"]),
            name=str(d.get("name", "custom")),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed problem config: missing or invalid {exc}") from exc


def problem_to_dict(p: Problem) -> dict:
    f = {"components": [to_text(c) for c in p.f.components]}
    if p.f.divergence is not None:
        f["divergence"] = to_text(p.f.divergence)
    if p.f.jacobian is not None:
        f["jacobian"] = [[to_text(c) for c in row] for row in p.f.jacobian]
    phi = {"expr": to_text(p.phi.expr)}
    if p.phi.majorant is not None:
        phi["majorant"] = to_text(p.phi.majorant)
    if p.rho0.normal is not None:
        rho0 = {"normal": {"mean": list(p.rho0.normal[0]), "sd": list(p.rho0.normal[1])}}
    else:
        rho0 = {"expr": to_text(p.rho0.expr)}
    if p.delta.kind == "box":
        delta = {"kind": "box", "lo": list(p.delta.lo), "hi": list(p.delta.hi)}
    else:
        delta = {"kind": "finite", "points": [list(pt) for pt in p.delta.points]}
    return {
        "name": p.name,
        "n": p.n,
        "m": p.m,
        "T": p.T,
        "time_steps": p.time_steps,
        "domain": {"lo": list(p.domain_lo), "hi": list(p.domain_hi)},
        "grid": list(p.grid),
        "f": f,
        "phi": phi,
        "rho0": rho0,
        "delta": delta,
    }


def control_from_dict(d: dict, problem: Problem) -> Control:
    """Parse a control from JSON and check it against ``problem``.

    Accepted forms::

        {"kind": "constant", "value": [...]}
        {"kind": "ordinary", "values": [[...], ...]}
        {"kind": "relaxed", "intervals": [{"atoms": [[...]], "weights": [...]}, ...]}
    """
    try:
        kind = d.get("kind", "ordinary")
        if kind == "constant":
            u: Control = ControlSignal.constant(problem, d.get("value"))
        elif kind == "ordinary":
            u = ControlSignal(np.asarray(d["values"], dtype=float).reshape(-1, problem.m))
        elif kind == "relaxed":
            ivs = d["intervals"]
            u = RelaxedControl(
                tuple(np.asarray(iv["atoms"], dtype=float).reshape(-1, problem.m) for iv in ivs),
                tuple(np.asarray(iv["weights"], dtype=float) for iv in ivs),
            )
        else:
            raise ConfigError(f"unknown control kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed control: {exc}") from exc
    u.check(problem)
    return u


def control_to_dict(u: Control) -> dict:
    if isinstance(u, ControlSignal):
        return {"kind": "ordinary", "values": u.values.tolist()}
    return {
        "kind": "relaxed",
        "intervals": [{"atoms": a.tolist(), "weights": w.tolist()} for a, w in zip(u.atoms, u.weights)],
    }


def load_problem(source: str | Path) -> tuple[Problem, dict]:
    """Load a problem from a catalog name or a JSON file.

    Returns the problem and the raw config dict (empty for catalog names),
    which may carry extra sections such as ``control``.
    """
    from .catalog import CATALOG, get_problem

    if isinstance(source, str) and source in CATALOG:
        return get_problem(source), {}
    path = Path(source)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read problem config {source}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("problem config must be a JSON object")
    if "catalog" in raw:
        base = problem_to_dict(get_problem(raw["catalog"]))
        base.update({k: v for k, v in raw.items() if k not in ("catalog", "control", "run")})
        return problem_from_dict(base), raw
    return problem_from_dict(raw), raw
