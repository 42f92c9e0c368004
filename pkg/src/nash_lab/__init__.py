"""Numerical laboratory for N-player Nash systems and their mean field limit."""
from __future__ import annotations

from .grid import Field, TensorGrid, interpolate, load_field, save_field
from .model import (
    CostFamily,
    EmpiricalMeasure,
    HamiltonianSpec,
    MomentCoupledCost,
    NashProblem,
    catalog_costs,
    validate_assumptions,
)
from .nash_solver import NashSolution, SolverConfig, pde_residual, solve_nash

__version__ = "0.1.0"

__all__ = [
    "CostFamily",
    "EmpiricalMeasure",
    "Field",
    "HamiltonianSpec",
    "MomentCoupledCost",
    "NashProblem",
    "NashSolution",
    "SolverConfig",
    "TensorGrid",
    "catalog_costs",
    "interpolate",
    "load_field",
    "pde_residual",
    "save_field",
    "solve_nash",
    "validate_assumptions",
    "__version__",
]
