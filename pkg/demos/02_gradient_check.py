"""
Checking the covariance-form gradients
======================================

On a small sigmoid belief net every latent state can be enumerated, so the
gradient formulas can be evaluated exactly and compared with finite
differences of the exact bound.
"""

import math

import numpy as np

from vrs.fixtures import tiny_sbn
from vrs.grad import relbo_grad_estimate, relbo_grad_exact
from vrs.oracle import exact_relbo, fd_grad
from vrs.resampler import ResampledProposal

model, proposal, x, space = tiny_sbn(np.random.default_rng(1), visible=5, latent=6)
states = space.states

for T in (math.inf, 4.0, 0.0):
    rp = ResampledProposal(proposal, model, T)
    exact = relbo_grad_exact(rp, x, states)
    fd_phi = fd_grad(lambda p: exact_relbo(ResampledProposal(proposal.with_params(p), model, T), x, states),
                     proposal.params.values, 1e-5)
    fd_theta = fd_grad(lambda p: exact_relbo(ResampledProposal(proposal, model.with_params(p), T), x, states),
                       model.params.values, 1e-5)
    print(f"T={T:>4}: max |phi error| {np.abs(exact.d_phi.values - fd_phi).max():.1e}, "
          f"max |theta error| {np.abs(exact.d_theta.values - fd_theta).max():.1e}")

# the sampled estimator is noisy but centred on the exact gradient
rp = ResampledProposal(proposal, model, 4.0)
rng = np.random.default_rng(0)
draws = np.array([relbo_grad_estimate(rp, x, rng, 5).d_phi.values for _ in range(5000)])
exact = relbo_grad_exact(rp, x, states).d_phi.values
se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
z = np.abs(draws.mean(axis=0) - exact) / np.where(se > 0, se, np.inf)
print("sampled S=5 phi-gradient, 5000 batches: largest |z| =", round(float(z.max()), 2))
