"""Block semimonotonicity margin along time for N = 2, 3, 4.

Data sit just inside the admissible margins; the propagated margin stays
above ``-1/(2T)``.  Run with ``python3 demos/margin_flow.py`` (about a minute).
"""
from __future__ import annotations

import numpy as np

from nash_lab.grid import TensorGrid
from nash_lab.model import NashProblem, catalog_costs
from nash_lab.monotonicity import propagation_thresholds, semimonotonicity_scan
from nash_lab.nash_solver import SolverConfig, solve_nash

A = 0.47240904191214184  # block margin a - eps/(N-1) equals -M_f* at N = 2


def main() -> None:
    th = propagation_thresholds(1.0)
    print(f"M_g* = {th['M_g']:.4f}, M_f* = {th['M_f']:.4f}, M* = {th['M']:.4f}")
    for N, n in [(2, 33), (3, 21), (4, 13)]:
        costs = catalog_costs("convex-quadratic-coupled", N, f_a=A, g_a=A)
        sol = solve_nash(NashProblem(N, costs), TensorGrid(N, n, 3.0), SolverConfig(time_steps=100))
        levels = np.linspace(0, len(sol.times) - 1, 6).astype(int)
        rep = semimonotonicity_scan(sol, mode="block", levels=levels)
        row = " ".join(f"{m:+.3f}" for m in rep.block_margin)
        print(f"N={N}: block margin at t = {', '.join(f'{t:.1f}' for t in rep.times)}: {row}")


if __name__ == "__main__":
    main()
