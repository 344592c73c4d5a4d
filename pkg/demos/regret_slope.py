"""Sweep horizons for the adaptive policy and fit the log-log regret slope.

    python demos/regret_slope.py [out_dir]
"""
import sys

from orbit_pricing.harness import ExperimentConfig, emit, fit_loglog_slope, median_regret_points, run

cfg = ExperimentConfig(T=(3000, 10_000, 30_000, 100_000), repetitions=3)
res = run(cfg)
for T, med in median_regret_points(res):
    print(f"T = {T:7d}  median regret = {med:9.1f}")
slope, _, r2 = fit_loglog_slope(median_regret_points(res))
print(f"slope = {slope:.3f}  (r2 = {r2:.3f})")
if len(sys.argv) > 1:
    emit(res, sys.argv[1])
    print("wrote", sys.argv[1])
