"""N-player paths against McKean-Vlasov paths for growing N.

Solves the limit game once, then reports the propagation-of-chaos gap of
the closed-loop N-player system.  Run with ``python3 demos/mfg_limit.py``.
"""
from __future__ import annotations

from nash_lab.grid import TensorGrid
from nash_lab.mfg import MFGProblem, gaussian_density, picard_mfg
from nash_lab.model import NashProblem, catalog_costs, catalog_mf_pair
from nash_lab.nash_solver import SolverConfig, solve_nash
from nash_lab.particles import SimConfig, chaos_gap


def main() -> None:
    F, G = catalog_mf_pair("convex-quadratic-coupled")
    x = TensorGrid(1, 201, 6.0).nodes
    mfg = picard_mfg(MFGProblem(F, G, [gaussian_density(x, 0.0, 0.25)], n=201, time_steps=200))
    print(f"MFG Picard converged in {mfg.iterations} iterations")
    for N, n in [(2, 33), (3, 21), (4, 13)]:
        sol = solve_nash(NashProblem(N, catalog_costs("convex-quadratic-coupled", N)),
                         TensorGrid(N, n, 3.0), SolverConfig(time_steps=100))
        gap = chaos_gap(sol, mfg, cfg=SimConfig(paths=2048, seed=1))
        print(f"N={N}: E sup|X~ - X|^2 = {gap.gap:.4f} (stderr {gap.stderr:.4f})")


if __name__ == "__main__":
    main()
