"""Built-in problems.

Grids for the indicator-cost problems are offset by half a cell so that the
jumps of ``step(0.5 - abs(x1))`` fall on cell midpoints, where trapezoid
quadrature of a jump is unbiased.  For ``bang1d`` the spacing also equals the
time step, so the jump loci ``+-0.5 - U(t)`` of translated values stay on
cell midpoints under bang controls.
"""

from __future__ import annotations

import math

from .expr import parse_field_expression as parse
from .problem import ControlSet, CostFieldSpec, InitialDensitySpec, Problem, VectorFieldSpec

__all__ = ["CATALOG", "get_problem"]


def linear1d() -> Problem:
    return Problem(
        name="linear1d",
        n=1,
        m=0,
        f=VectorFieldSpec((parse("-x1", 1),), divergence=parse("-1", 1), jacobian=((parse("-1", 1),),)),
        phi=CostFieldSpec(parse("x1 * step(5 - abs(x1))", 1), majorant=parse("5", 1)),
        rho0=InitialDensitySpec.gaussian([0.0], [1.0]),
        delta=ControlSet.trivial(),
        T=1.0,
        domain_lo=(-8.0,),
        domain_hi=(8.0,),
        grid=(257,),
        time_steps=128,
    )


def bang1d() -> Problem:
    h = 1.0 / 64
    return Problem(
        name="bang1d",
        n=1,
        m=1,
        f=VectorFieldSpec((parse("u1", 1, 1),), divergence=parse("0", 1, 1)),
        phi=CostFieldSpec(parse("step(0.5 - abs(x1))", 1, 1), majorant=parse("1", 1)),
        rho0=InitialDensitySpec.gaussian([-0.25], [0.5]),
        delta=ControlSet.box([-1.0], [1.0]),
        T=1.0,
        domain_lo=(-4.0 - h / 2,),
        domain_hi=(4.0 + h / 2,),
        grid=(514,),
        time_steps=64,
    )


def rotation2d() -> Problem:
    return Problem(
        name="rotation2d",
        n=2,
        m=0,
        f=VectorFieldSpec(
            (parse("-x2", 2), parse("x1", 2)),
            divergence=parse("0", 2),
            jacobian=((parse("0", 2), parse("-1", 2)), (parse("1", 2), parse("0", 2))),
        ),
        phi=CostFieldSpec(parse("step(0.5 - abs(x1)) * step(2 - abs(x2))", 2), majorant=parse("1", 2)),
        rho0=InitialDensitySpec.gaussian([1.0, 0.0], [0.5, 0.5]),
        delta=ControlSet.trivial(),
        T=math.pi / 2,
        domain_lo=(-4.0, -4.0),
        domain_hi=(4.0, 4.0),
        grid=(65, 65),
        time_steps=32,
    )


def slab1d() -> Problem:
    h = 1.0 / 32
    return Problem(
        name="slab1d",
        n=1,
        m=0,
        f=VectorFieldSpec((parse("0", 1),), divergence=parse("0", 1)),
        phi=CostFieldSpec(parse("step(0.5 - abs(x1))", 1), majorant=parse("1", 1)),
        rho0=InitialDensitySpec.gaussian([0.0], [1.0]),
        delta=ControlSet.trivial(),
        T=1.0,
        domain_lo=(-4.0 - h / 2,),
        domain_hi=(4.0 + h / 2,),
        grid=(258,),
        time_steps=32,
    )


CATALOG = {
    "linear1d": linear1d,
    "bang1d": bang1d,
    "rotation2d": rotation2d,
    "slab1d": slab1d,
}


def get_problem(name: str) -> Problem:
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown catalog problem {name!r}; choose from {sorted(CATALOG)}") from None
