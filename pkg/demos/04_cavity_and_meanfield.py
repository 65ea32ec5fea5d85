"""Classical cavity transition on the Bethe lattice and the mean-field quantum critical field.

Run: python demos/04_cavity_and_meanfield.py
"""

import math

import numpy as np

from bethe_qsg import cavity, meanfield
from bethe_qsg.graph import make_instance

k = 2
tc = cavity.classical_tc(k)
print(f"K={k}: closed-form T_c = {tc:.5f}")
print("   T     variance multiplier per generation")
for t in (0.9, 1.1, 1.135, 1.2, 1.5):
    rate = cavity.variance_growth_rate(1 / t, k, seed=1)
    print(f"{t:6.3f}  {rate:.4f}  {'paramagnet stable' if rate < 1 else 'glass'}")

# Linearized quantum cavity: the lowest eigenvalue of the signed hopping matrix sits at the
# band edge -2 sqrt(K) for large random graphs, giving Gamma_c = sqrt(K) at first order.
e0 = [meanfield.extremal_energy(meanfield.HoppingModel.from_instance(make_instance(1000, 3, s)))
      for s in range(5)]
print(f"\nN=1000 band edge {np.mean(e0):.4f} (limit {-2 * math.sqrt(k):.4f}); "
      f"Gamma_c first order {meanfield.gamma_c_first_order(np.mean(e0)):.4f}")
print(f"with a second-order correction rho=0.3: Gamma_c = {meanfield.gamma_c_mean_field(k, rho=0.3):.3f}")
