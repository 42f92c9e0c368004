"""Two-player LQ game: grid solver against the Riccati reference.

Run with ``python3 demos/lq_oracle.py``; takes a few seconds.
"""
from __future__ import annotations

import numpy as np

from nash_lab.grid import TensorGrid
from nash_lab.model import NashProblem, catalog_costs
from nash_lab.nash_solver import SolverConfig, pde_residual, solve_nash
from nash_lab.oracle import lq_spec_from_costs, riccati_nash


def main() -> None:
    costs = catalog_costs("convex-quadratic-coupled", 2)
    ric = riccati_nash(lq_spec_from_costs(costs), steps=4000)
    print(" n    K   error(t=0)   pde residual")
    for n, K in [(17, 50), (33, 100), (65, 200)]:
        sol = solve_nash(NashProblem(2, costs), TensorGrid(2, n, 3.0), SolverConfig(time_steps=K))
        win = sol.grid.window_slices(0.5)
        exact = ric.value(0.0, sol.grid.window_points(0.5))[:, 0]
        err = np.max(np.abs(sol.fields[0].values[0][win].ravel() - exact))
        print(f"{n:3d} {K:4d}   {err:.3e}    {pde_residual(sol)[1]:.3e}")
    print("block margin of the exact solution over time:",
          " ".join(f"{ric.block_margin(t):+.3f}" for t in np.linspace(0, 1, 6)))


if __name__ == "__main__":
    main()
