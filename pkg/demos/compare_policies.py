"""Median cumulative regret of each policy on the linear experiment.

    python demos/compare_policies.py [T] [reps]
"""
import sys

from orbit_pricing.env import build_oracle_table
from orbit_pricing.harness import POLICIES, ExperimentConfig, build_instance, run, uniform_gap

T = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
reps = int(sys.argv[2]) if len(sys.argv) > 2 else 3

base = ExperimentConfig(T=T, repetitions=reps)
inst = build_instance(base)
gap = uniform_gap(inst, build_oracle_table(inst))
print(f"T = {T}, reps = {reps}, uniform per-round gap = {gap:.4f}")
for policy in POLICIES:
    res = run(ExperimentConfig(T=T, repetitions=reps, policy=policy))
    row = res.summary[0]
    print(f"{policy:28s} median {row['median']:9.1f}   per round {row['median'] / T:.4f}")
