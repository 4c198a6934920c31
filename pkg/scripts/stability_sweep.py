"""Simulated mean backlog across arrival rates around the stability threshold."""
import argparse

import numpy as np

from snc80211.bounds import check_stability, stability_input
from snc80211.dcf import Scenario, solve_fixed_point, stability_threshold
from snc80211.sim import SimConfig, run_experiment
from snc80211.traffic import TrafficModel


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--kind", choices=("poisson", "cbr"), default="poisson")
    p.add_argument("--lam", type=float, nargs="+", default=list(np.round(np.arange(0.070, 0.0851, 0.002), 3)))
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()

    sol = solve_fixed_point(Scenario(10, 256))
    print(f"threshold {stability_threshold(sol):.5f} packets/slot")
    print(f"{'lam':>6} {'stable':>6} {'snapshot':>9} {'time avg':>9} {'E D ms':>8}")
    for lam in args.lam:
        traffic = TrafficModel(args.kind, lam)
        cfg = SimConfig(Scenario(10, 256, traffic=traffic), args.duration, args.replications,
                        args.duration / 2, seed=7)
        res = run_experiment(cfg, args.workers)
        stable = check_stability(stability_input(traffic, sol))
        print(f"{lam:6.3f} {str(stable):>6} {res.mean_backlog:9.2f} {res.time_avg_backlog:9.2f} "
              f"{res.mean_sojourn * 1e3:8.2f}")


if __name__ == "__main__":
    main()
