"""Show that the monthly trend in long-term workday consistency does not hinge
on how the day is cut into segments.

    python demos/segmentation_trend.py [--seed 0]
"""
import argparse

import scipy.stats

from movement_rhythms import CohortConfig, simulate_cohort
from movement_rhythms import analysis


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cohort = simulate_cohort(CohortConfig(seed=args.seed))
    daily, monthly = analysis.multi_segmentation_series(cohort.steps)
    monthly["stringency"] = monthly["year_month"].map(analysis.monthly_stringency(cohort.stringency))
    print(monthly.round(3).to_string(index=False), "\n")
    for k in ("k6", "k8", "k12"):
        rho = scipy.stats.spearmanr(monthly["k4"], monthly[k]).statistic
        print(f"Spearman rho, 4 segments vs {k[1:]}: {rho:.3f}")
    rho = scipy.stats.spearmanr(monthly["k4"], monthly["stringency"]).statistic
    print(f"Spearman rho, 4-segment series vs stringency: {rho:.3f}")
    print(f"\nlast rows of the 7-day rolling series:\n{daily.tail(3).round(3).to_string(index=False)}")


if __name__ == "__main__":
    main()
