"""
Resampling a uniform proposal on a 5x5 grid
===========================================

A uniform proposal is filtered through the soft acceptance step at a few
thresholds. Lowering T trades acceptance rate for a resampled distribution
that sits closer to the target.
"""

import math

import numpy as np

from vrs.fixtures import grid_problem
from vrs.oracle import exact_kl_R_P, exact_log_evidence, exact_relbo, exact_ZR, resampled_probs
from vrs.resampler import ResampledProposal

target, proposal, space = grid_problem()
log_z = exact_log_evidence(target, None, space)

# exact quantities by enumerating all 25 cells
print(f"{'T':>6} {'Z_R':>8} {'KL(R||P)':>9} {'R-ELBO':>8}   (log p(x) = {log_z:.4f})")
for T in [math.inf, 10.0, 5.0, 0.0, -2.0, -5.0]:
    rp = ResampledProposal(proposal, target, T)
    print(f"{T:>6} {exact_ZR(rp, None, space):8.4f} {exact_kl_R_P(rp, None, space):9.4f} "
          f"{exact_relbo(rp, None, space):8.4f}")

# the sampler reproduces the enumerated distribution
rp = ResampledProposal(proposal, target, 0.0)
batch = rp.sample(None, 200_000, np.random.default_rng(0))
emp = np.bincount(batch.accepted, minlength=25) / len(batch)
print("\nacceptance rate", round(batch.acceptance_rate, 4), "vs Z_R", round(exact_ZR(rp, None, space), 4))
print("total variation to enumerated R:", round(0.5 * np.abs(emp - resampled_probs(rp, None, space)).sum(), 4))

# resampled mass as a grid, next to the target
np.set_printoptions(precision=3, suppress=True)
print("\nresampled R at T=0\n", resampled_probs(rp, None, space).reshape(5, 5))
print("target posterior\n", np.exp(target.log_joint(None, space.states) - log_z).reshape(5, 5))
