"""Tabulate the slope-convergence fit against the certified impairment envelope.

For each theta the slope-convergence line (sigma, rho, t*) is compared with
the asymptotic growth rate; when rho sits below it, the line is eventually
crossed, and the first crossing time is reported.
"""
import argparse

import numpy as np

from snc80211.bounds import impairment_constraint
from snc80211.dcf import Scenario, impairment_envelope, solve_fixed_point


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--payload", type=int, default=256)
    p.add_argument("--horizon", type=int, default=5000)
    args = p.parse_args()

    sol = solve_fixed_point(Scenario(args.n, args.payload))
    print(f"{'theta':>7} {'rho':>9} {'sigma':>8} {'t*':>4} {'rho_inf':>9} {'sigma_cert':>10} {'crossed at':>10}")
    for theta in np.geomspace(1e-2, 5.0, 12):
        env = impairment_constraint(sol, float(theta))
        m = impairment_envelope(sol, float(theta), args.horizon)
        above = np.nonzero(m > env.fit.rho * np.arange(m.size) + env.fit.sigma + 1e-12)[0]
        cross = str(above[0]) if above.size else "-"
        print(f"{theta:7.3f} {env.fit.rho:9.5f} {env.fit.sigma:8.4f} {env.fit.t_star:4d} "
              f"{env.rho:9.5f} {env.sigma:10.4f} {cross:>10}")


if __name__ == "__main__":
    main()
