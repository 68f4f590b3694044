"""Small built-in problems with exactly enumerable latent spaces."""

from __future__ import annotations

import math

import numpy as np

from .models import (CategoricalProposal, GridTarget, PoissonProposal, SigmoidBeliefNet,
                     TruncatedPoissonTarget)
from .oracle import EnumerableSpace

GRID_SIZE = 5


def grid_log_weights(n: int = GRID_SIZE) -> np.ndarray:
    """Two overlapping bumps, the larger near (1, 1) and a smaller one near (3, 3.5)."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    big = -((i - 1) ** 2 + (j - 1) ** 2) / 1.5
    small = math.log(0.7) - ((i - 3) ** 2 + (j - 3.5) ** 2) / 1.0
    return 2.0 * np.logaddexp(big, small)


def grid_problem(n: int = GRID_SIZE):
    """``(target, uniform proposal, space)`` for the grid fixture."""
    return GridTarget(grid_log_weights(n)), CategoricalProposal.uniform(n * n), EnumerableSpace.grid(n)


def poisson_problem(phi: float = math.log(4.0), rate=10.0, cutoff=5, floor_mass=1e-30, cap=200):
    target = TruncatedPoissonTarget(rate, cutoff, floor_mass, cap)
    return target, PoissonProposal(phi), EnumerableSpace.integers(cap)


def tiny_sbn(rng, visible: int = 5, latent: int = 8, scale: float = 1.0):
    """Random single-latent-layer SBN pair plus an observation and latent space.

    Parameters are Gaussian with standard deviation ``scale`` so that the
    posterior is far from uniform.
    """
    sizes = [visible, latent]
    model = SigmoidBeliefNet(sizes, "generative")
    model = model.with_params(rng.normal(0.0, scale, len(model.params)))
    proposal = SigmoidBeliefNet(sizes, "recognition")
    proposal = proposal.with_params(rng.normal(0.0, scale, len(proposal.params)))
    x = (rng.random(visible) < 0.5).astype(np.float64)
    return model, proposal, x, EnumerableSpace.binary(latent)
