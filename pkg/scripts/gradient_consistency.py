"""Quadratic-variation gradient against the regression Z on the heat benchmark."""
import argparse

import numpy as np

from rfbsde.analysis import gradient_from_values, solve
from rfbsde.benchmarks import heat_exact_gradient, heat_neumann
from rfbsde.geometry import interval
from rfbsde.paths import InitialCondition, TimeGrid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--samples", type=int, default=50000)
    ap.add_argument("--seed", type=int, default=8)
    ap.add_argument("--windows", type=int, nargs="+", default=[1, 2, 5, 10, 20])
    ap.add_argument("--x0", type=float, default=0.25)
    args = ap.parse_args()
    g = TimeGrid(0.5, args.steps, 0.1)
    sol = solve(heat_neumann(), interval(), InitialCondition.constant(g, [args.x0]), g,
                args.samples, args.seed)
    X = sol.forward.X[..., 0]
    last = g.steps - g.delay_steps
    for w in args.windows:
        ge = gradient_from_values(sol.forward, sol.backward.Y, w, 1e3, np.arange(0, last + 1))
        zbar = sol.backward.Z[:, ge.nodes, 0].mean(axis=0)
        exact = heat_exact_gradient(g.times[ge.nodes], X[:, ge.nodes], 0.5).mean(axis=0)
        rel = np.sum((ge.values[:, 0] - zbar) ** 2) / np.sum(zbar ** 2)
        rel_exact = np.sum((zbar - exact) ** 2) / np.sum(exact ** 2)
        print(f"window {w:3d} steps: zeta vs Z {rel:.2e}   Z vs exact gradient {rel_exact:.2e}")


if __name__ == "__main__":
    main()
