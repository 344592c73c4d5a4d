"""Build the bump-perturbed hard family and print its sanity checks."""
import numpy as np

from orbit_pricing.hard_instance import HardFamily, family_checks, shift_check

fam = HardFamily()
print(f"w = {fam.w:.4g}, M = {fam.M}, mu0 = {fam.mu0:.6f}")
for k, v in family_checks(fam).items():
    print(f"  {k} = {v}")

# one random sign pattern, shift of the optimal price at each support context
om = fam.random_omega(np.random.default_rng(1))
for r in shift_check(fam, om)[:5]:
    print({k: (round(v, 8) if isinstance(v, float) else v) for k, v in r.items()})
