"""Characteristics of ``dy/dt = f(y, u(t), t)``.

All integration is fixed-step classical RK4 with steps aligned to the
control mesh, so the control is constant inside every step.  Relaxed
controls integrate the mixture field.  Batch routines ("sweeps") integrate
many start points and many start times at once; they back the transport
operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import Control, Problem, eval_cost, eval_divergence, eval_vector_field

__all__ = [
    "DEFAULT_SUBSTEPS",
    "DEFAULT_OVERSAMPLE",
    "EscapeError",
    "Trajectory",
    "FlowMapBatch",
    "velocity",
    "mixture_divergence",
    "mixture_cost",
    "integrate_trajectory",
    "integrate_backward",
    "divergence_integral",
    "value_along_trajectory",
    "flow_map",
    "sweep_values",
    "sweep_preimages",
    "sweep_states",
]

DEFAULT_SUBSTEPS = 2
DEFAULT_OVERSAMPLE = 4


class EscapeError(RuntimeError):
    """A characteristic left the safety box (the domain inflated by 2)."""

    def __init__(self, time: float, index=None, start_time: float | None = None):
        self.time = time
        self.index = index
        self.start_time = start_time
        msg = f"trajectory escaped the safety box at t={time:.6g}"
        if index is not None:
            msg += f" (start node {index}"
            msg += f", start time {start_time:.6g})" if start_time is not None else ")"
        super().__init__(msg)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States at increasing ``times``; ``states`` has shape ``(len(times), n)``."""

    times: np.ndarray
    states: np.ndarray
    control: Control


@dataclass(frozen=True, eq=False)
class FlowMapBatch:
    sources: np.ndarray  # (B, n)
    images: np.ndarray  # (B, n)
    divergence_integrals: np.ndarray  # (B,)
    s: float
    t: float


def velocity(p: Problem, u: Control, k: int, x, t: float) -> np.ndarray:
    atoms, weights = u.mixture(k)
    if len(weights) == 1:
        return eval_vector_field(p.f, x, atoms[0], t)
    out = np.zeros(np.shape(x))
    for a, w in zip(atoms, weights):
        out += w * eval_vector_field(p.f, x, a, t)
    return out


def _h_div(p: Problem) -> float | None:
    return None if p.f.divergence is not None else 1e-4 * p.diameter


def mixture_divergence(p: Problem, u: Control, k: int, x, t: float) -> np.ndarray:
    atoms, weights = u.mixture(k)
    h = _h_div(p)
    out = 0.0
    for a, w in zip(atoms, weights):
        out = out + w * eval_divergence(p.f, x, a, t, h)
    return np.broadcast_to(out, np.shape(x)[:-1])


def mixture_cost(p: Problem, u: Control, k: int, x, t: float, phi=None) -> np.ndarray:
    phi = p.phi if phi is None else phi
    atoms, weights = u.mixture(k)
    out = 0.0
    for a, w in zip(atoms, weights):
        out = out + w * eval_cost(phi, x, a, t)
    return np.broadcast_to(out, np.shape(x)[:-1])


def _rk4(p, u, k, y, t, h):
    k1 = velocity(p, u, k, y, t)
    k2 = velocity(p, u, k, y + 0.5 * h * k1, t + 0.5 * h)
    k3 = velocity(p, u, k, y + 0.5 * h * k2, t + 0.5 * h)
    k4 = velocity(p, u, k, y + h * k3, t + h)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), k1


def _steps(p: Problem, s: float, t_end: float, substeps: int):
    """Forward step list ``(t0, h, interval)`` covering ``[s, t_end]``."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    out = []
    mesh = p.times
    eps = 1e-12 * max(1.0, p.T)
    for k in range(p.time_steps):
        a = max(mesh[k], s)
        b = min(mesh[k + 1], t_end)
        if b - a <= eps:
            continue
        h = (b - a) / substeps
        out.extend((a + i * h, h, k) for i in range(substeps))
    return out


def _outside(y, lo, hi):
    return np.any((y < lo) | (y > hi), axis=-1)


def _integrate(p, u, x, s, t_end, substeps, backward=False):
    if not (0.0 <= s <= t_end <= p.T + 1e-12):
        raise ValueError(f"need 0 <= s <= t_end <= T, got s={s}, t_end={t_end}")
    steps = _steps(p, s, t_end, substeps)
    lo, hi = p.safety_box()
    y = np.array(x, dtype=float)
    if backward:
        steps = [(t0 + h, -h, k) for t0, h, k in reversed(steps)]
        times = [t_end]
    else:
        times = [s]
    states = [y]
    for t0, h, k in steps:
        y, _ = _rk4(p, u, k, y, t0, h)
        tn = t0 + h
        if np.any(_outside(y, lo, hi)):
            raise EscapeError(tn)
        times.append(tn)
        states.append(y)
    times = np.asarray(times)
    states = np.stack(states)
    if backward:
        times = times[::-1]
        states = states[::-1]
        times[0] = s
    else:
        times[-1] = t_end
    return times, states


def integrate_trajectory(
    p: Problem, u: Control, x, s: float = 0.0, t_end: float | None = None, substeps: int = DEFAULT_SUBSTEPS
) -> Trajectory:
    """Forward characteristic through ``(x, s)`` up to ``t_end`` (default ``T``)."""
    t_end = p.T if t_end is None else t_end
    x = np.asarray(x, dtype=float).reshape(p.n)
    times, states = _integrate(p, u, x, s, t_end, substeps)
    return Trajectory(times, states, u)


def integrate_backward(
    p: Problem, u: Control, x, t: float, s: float = 0.0, substeps: int = DEFAULT_SUBSTEPS
) -> Trajectory:
    """Characteristic ending at ``(x, t)``, traced back to ``s``.

    The returned trajectory is ordered by increasing time, so
    ``states[0]`` is the preimage at ``s`` and ``states[-1] == x``.
    """
    if s > t:
        raise ValueError("integrate_backward needs s <= t")
    x = np.asarray(x, dtype=float).reshape(p.n)
    times, states = _integrate(p, u, x, s, t, substeps, backward=True)
    return Trajectory(times, states, u)


def _segment_interval(p: Problem, t0: float, t1: float) -> int:
    return p.interval_of(0.5 * (t0 + t1))


def divergence_integral(p: Problem, u: Control, traj: Trajectory) -> float:
    """Trapezoid rule for ``int div f(y(t), u(t), t) dt`` along ``traj``."""
    total = 0.0
    for i in range(len(traj.times) - 1):
        t0, t1 = traj.times[i], traj.times[i + 1]
        k = _segment_interval(p, t0, t1)
        d0 = mixture_divergence(p, u, k, traj.states[i], t0)
        d1 = mixture_divergence(p, u, k, traj.states[i + 1], t1)
        total += 0.5 * (t1 - t0) * float(d0 + d1)
    return total


def _hermite(y0, y1, f0, f1, h, theta):
    t2 = theta * theta
    t3 = t2 * theta
    return (
        (2 * t3 - 3 * t2 + 1) * y0
        + (t3 - 2 * t2 + theta) * h * f0
        + (-2 * t3 + 3 * t2) * y1
        + (t3 - t2) * h * f1
    )


def _segment_cost(p, u, k, y0, y1, t0, h, oversample, phi, f0=None):
    """Composite midpoint rule for ``phi`` on one step, cubic Hermite states."""
    if f0 is None:
        f0 = velocity(p, u, k, y0, t0)
    f1 = velocity(p, u, k, y1, t0 + h)
    total = 0.0
    for j in range(oversample):
        theta = (j + 0.5) / oversample
        y = _hermite(y0, y1, f0, f1, h, theta)
        total = total + mixture_cost(p, u, k, y, t0 + theta * h, phi)
    return total * (h / oversample)


def value_along_trajectory(
    p: Problem, u: Control, traj: Trajectory, oversample: int = DEFAULT_OVERSAMPLE, phi=None
) -> float:
    """``int_s^T phi(y(t), u(t), t) dt`` by oversampled composite midpoint.

    States between trajectory nodes come from cubic Hermite interpolation
    using the field at the nodes, which keeps the RK4 accuracy.
    """
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    total = 0.0
    for i in range(len(traj.times) - 1):
        t0, t1 = traj.times[i], traj.times[i + 1]
        k = _segment_interval(p, t0, t1)
        total += float(_segment_cost(p, u, k, traj.states[i], traj.states[i + 1], t0, t1 - t0, oversample, phi))
    return total


def flow_map(
    p: Problem, u: Control, x, s: float, t: float, substeps: int = DEFAULT_SUBSTEPS
) -> FlowMapBatch:
    """Images at ``t`` of points ``x`` (shape ``(B, n)``) started at ``s``."""
    x = np.asarray(x, dtype=float).reshape(-1, p.n)
    lo, hi = p.safety_box()
    y = x.copy()
    div = np.zeros(len(x))
    for t0, h, k in _steps(p, s, t, substeps):
        d0 = mixture_divergence(p, u, k, y, t0)
        y, _ = _rk4(p, u, k, y, t0, h)
        bad = _outside(y, lo, hi)
        if np.any(bad):
            raise EscapeError(t0 + h, int(np.argmax(bad)), s)
        div += 0.5 * h * (d0 + mixture_divergence(p, u, k, y, t0 + h))
    return FlowMapBatch(x, y, div, s, t)


# -- sweeps -------------------------------------------------------------------


def sweep_values(
    p: Problem,
    u: Control,
    x: np.ndarray,
    start_indices,
    phi=None,
    substeps: int = DEFAULT_SUBSTEPS,
    oversample: int = DEFAULT_OVERSAMPLE,
) -> np.ndarray:
    """``V[r, b] = int_{t_j}^T phi(y) dt`` for the characteristic from ``(x_b, t_j)``.

    ``start_indices`` are mesh indices ``j`` (one row each, any order).
    All rows are advanced through the same global steps; a row joins when
    the sweep reaches its start time.
    """
    x = np.asarray(x, dtype=float).reshape(-1, p.n)
    starts = np.asarray(start_indices, dtype=int)
    order = np.argsort(starts, kind="stable")
    sorted_starts = starts[order]
    rows = len(starts)
    y = np.broadcast_to(x, (rows,) + x.shape).copy()
    v = np.zeros((rows, len(x)))
    lo, hi = p.safety_box()
    mesh = p.times
    first = int(sorted_starts.min()) if rows else p.time_steps
    for k in range(first, p.time_steps):
        r = int(np.searchsorted(sorted_starts, k, side="right"))
        h = (mesh[k + 1] - mesh[k]) / substeps
        for i in range(substeps):
            t0 = mesh[k] + i * h
            y0 = y[:r]
            y1, f0 = _rk4(p, u, k, y0, t0, h)
            v[:r] += _segment_cost(p, u, k, y0, y1, t0, h, oversample, phi, f0=f0)
            bad = _outside(y1, lo, hi)
            if np.any(bad):
                row, node = np.unravel_index(int(np.argmax(bad)), bad.shape)
                raise EscapeError(t0 + h, int(node), float(mesh[sorted_starts[row]]))
            y[:r] = y1
    out = np.empty_like(v)
    out[order] = v
    return out


def sweep_preimages(
    p: Problem,
    u: Control,
    x: np.ndarray,
    s_index: int,
    end_indices,
    substeps: int = DEFAULT_SUBSTEPS,
):
    """Trace ``(x_b, t_j)`` back to ``t_s`` for every end index ``j >= s_index``.

    Returns ``(x0, div, exited)``, each with leading shape ``(rows, B)``:
    the preimage at ``t_s``, the trapezoid integral of ``div f`` along the
    path, and whether the path left the domain ``D`` (such rows are frozen
    at the exit step and carry no meaning in ``x0``/``div``).
    """
    x = np.asarray(x, dtype=float).reshape(-1, p.n)
    ends = np.asarray(end_indices, dtype=int)
    if np.any(ends < s_index):
        raise ValueError("end indices must be >= s_index")
    order = np.argsort(ends, kind="stable")
    sorted_ends = ends[order]
    rows = len(ends)
    y = np.broadcast_to(x, (rows,) + x.shape).copy()
    div = np.zeros((rows, len(x)))
    exited = np.zeros((rows, len(x)), dtype=bool)
    lo, hi = p.lo, p.hi
    mesh = p.times
    last = int(sorted_ends.max()) if rows else s_index
    for k in range(last - 1, s_index - 1, -1):
        r0 = int(np.searchsorted(sorted_ends, k + 1, side="left"))
        h = (mesh[k + 1] - mesh[k]) / substeps
        for i in range(substeps, 0, -1):
            t1 = mesh[k] + i * h
            y1 = y[r0:]
            gone = exited[r0:].copy()
            d1 = mixture_divergence(p, u, k, y1, t1)
            y0, _ = _rk4(p, u, k, y1, t1, -h)
            d0 = mixture_divergence(p, u, k, y0, t1 - h)
            out = _outside(y0, lo, hi) | gone
            y[r0:] = np.where(out[..., None], y1, y0)
            div[r0:] += np.where(out, 0.0, 0.5 * h * (d0 + d1))
            exited[r0:] = out
    inv = np.empty_like(order)
    inv[order] = np.arange(rows)
    return y[inv], div[inv], exited[inv]


def sweep_states(
    p: Problem,
    u: Control,
    x: np.ndarray,
    s_index: int = 0,
    substeps: int = DEFAULT_SUBSTEPS,
    record=None,
):
    """Forward states of points started at ``t_s``, recorded at mesh times.

    ``record`` lists mesh indices to keep (default: all from ``s_index``).
    Returns ``(indices, states, exited)`` with ``states`` of shape
    ``(len(indices), B, n)``; ``exited[r, b]`` says whether point ``b`` has
    left ``D`` at or before that time.
    """
    x = np.asarray(x, dtype=float).reshape(-1, p.n)
    record = list(range(s_index, p.time_steps + 1)) if record is None else sorted(record)
    if record and record[0] < s_index:
        raise ValueError("record indices must be >= s_index")
    wanted = set(record)
    states = []
    flags = []
    y = x.copy()
    gone = _outside(y, p.lo, p.hi)
    slo, shi = p.safety_box()
    if s_index in wanted:
        states.append(y.copy())
        flags.append(gone.copy())
    mesh = p.times
    stop = record[-1] if record else s_index
    for k in range(s_index, stop):
        h = (mesh[k + 1] - mesh[k]) / substeps
        for i in range(substeps):
            t0 = mesh[k] + i * h
            y, _ = _rk4(p, u, k, y, t0, h)
            bad = _outside(y, slo, shi)
            if np.any(bad):
                raise EscapeError(t0 + h, int(np.argmax(bad)), float(mesh[s_index]))
            gone |= _outside(y, p.lo, p.hi)
        if k + 1 in wanted:
            states.append(y.copy())
            flags.append(gone.copy())
    return np.asarray(record), np.stack(states), np.stack(flags)
