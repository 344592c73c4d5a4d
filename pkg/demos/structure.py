"""Numerical structure constants (growth, concavity radius, oracle slope) per experiment."""
from orbit_pricing.harness import ExperimentConfig, build_instance
from orbit_pricing.verify import structure_report

for name, extra in (("linear_iid", {}), ("anisotropic", {}), ("sparse", {"d": 20, "s": 3})):
    rep = structure_report(build_instance(ExperimentConfig(experiment=name, **extra)))
    print(f"[{name}]")
    print(rep.to_text())
