"""Run the four bound-versus-simulation experiments and print a summary table.

Each experiment's JSON report and CSV tables land in results/experiment<k>/.
"""
import argparse
import io
import json
from pathlib import Path

from snc80211 import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(ROOT / "results"))
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()

    print(f"{'exp':>3} {'kind':>8} {'lam':>6} {'E B bound':>10} {'E B sim':>8} {'E D ms':>7} "
          f"{'backlog':>8} {'markov':>7}")
    for k in (1, 2, 3, 4):
        argv = ["experiment", str(ROOT / "scenarios" / f"experiment{k}.toml"),
                "--out", str(Path(args.out) / f"experiment{k}"), "--workers", str(args.workers)]
        if args.replications:
            argv += ["--replications", str(args.replications)]
        buf = io.StringIO()
        if cli.run(argv, stdout=buf) != 0:
            raise SystemExit(f"experiment {k} failed")
        r = json.loads(buf.getvalue())
        t, v = r["scenario"]["traffic"], r["verdicts"]
        print(f"{k:>3} {t['kind']:>8} {t['lam']:>6} {r['bound']['expected_backlog_bound']:>10.3g} "
              f"{r['simulate']['time_avg_backlog']:>8.3f} {r['simulate']['mean_sojourn_s'] * 1e3:>7.2f} "
              f"{str(v['backlog_dominance']):>8} {str(v['markov_delay_dominance']):>7}")


if __name__ == "__main__":
    main()
