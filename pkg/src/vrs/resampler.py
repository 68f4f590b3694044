"""Resampled proposals: a soft accept/reject step on top of a proposal.

A proposal ``q(z|x)`` is filtered by the acceptance probability

    a(z|x, T) = exp(-softplus(l)),   l = -log p(x, z) + log q(z|x) - T,

which yields the unnormalised density ``q(z|x) a(z|x, T)``. ``T = +inf``
switches rejection off; lowering ``T`` pulls the resampled distribution
towards the true posterior at the price of more rejections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetExhausted
from .models import softplus

DEFAULT_MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class SampleBatch:
    accepted: np.ndarray
    attempts: int
    # proposals consumed by each accepted sample, including the accepted one
    run_lengths: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return len(self.accepted) / self.attempts

    def __len__(self):
        return len(self.accepted)


@dataclass(frozen=True)
class ResampledProposal:
    """``(proposal, model, threshold)`` with a per-sample attempt budget."""

    proposal: object
    model: object
    threshold: float = math.inf
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if math.isnan(self.threshold) or self.threshold == -math.inf:
            raise ValueError("threshold must be finite or +inf")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")

    @property
    def rejects(self) -> bool:
        return self.threshold != math.inf

    def with_threshold(self, threshold) -> "ResampledProposal":
        return ResampledProposal(self.proposal, self.model, float(threshold), self.max_attempts)

    def terms(self, x, z):
        """``(log p(x, z), log q(z|x), l)`` for a batch of latents."""
        log_p = np.asarray(self.model.log_joint(x, z), dtype=np.float64)
        log_q = np.asarray(self.proposal.log_prob(x, z), dtype=np.float64)
        if not self.rejects:
            return log_p, log_q, np.full(log_p.shape, -np.inf)
        return log_p, log_q, -log_p + log_q - self.threshold

    def log_ratio(self, x, z):
        return self.terms(x, z)[2]

    def log_accept_prob(self, x, z):
        return -softplus(self.log_ratio(x, z))

    def log_unnorm_density(self, x, z):
        _, log_q, l = self.terms(x, z)
        return log_q - softplus(l)

    def sample(self, x, n, rng) -> SampleBatch:
        """Draw ``n`` exact samples by proposing and accepting with prob ``a``.

        Proposals are drawn in blocks and scanned in order, which is the same
        as running the one-at-a-time loop on the same stream of draws. Any
        accepted sample that needed more than ``max_attempts`` proposals
        raises :class:`BudgetExhausted`.
        """
        if n < 1:
            raise ValueError("n must be at least 1")
        chunks = []
        runs = []
        attempts = 0
        pending = 0  # rejections since the last acceptance
        rate = 1.0 if not self.rejects else 0.5
        while len(runs) < n:
            need = n - len(runs)
            block = int(min(max(math.ceil(1.2 * need / rate) + 8, 16), 4_000_000))
            z = self.proposal.sample(x, block, rng)
            if self.rejects:
                log_u = np.log(rng.random(block))
                accept = log_u < self.log_accept_prob(x, z)
            else:
                accept = np.ones(block, dtype=bool)
            idx = np.flatnonzero(accept)[:need]
            if idx.size:
                lengths = np.diff(np.concatenate([[-1], idx]))
                lengths[0] += pending
                bad = np.flatnonzero(lengths > self.max_attempts)
                if bad.size:
                    raise BudgetExhausted(int(lengths[bad[0]]), self.max_attempts)
                runs.extend(lengths.tolist())
                chunks.append(z[idx])
                used = idx[-1] + 1
                pending = block - used if len(runs) < n else 0
                attempts += used if len(runs) >= n else block
            else:
                pending += block
                attempts += block
            if pending > self.max_attempts:
                raise BudgetExhausted(pending, self.max_attempts)
            rate = max(len(runs) / max(attempts, 1), 1e-4)
        return SampleBatch(np.concatenate(chunks)[:n], int(attempts), np.asarray(runs[:n]))


def log_ratio_l(rp: ResampledProposal, x, z) -> float:
    return float(rp.log_ratio(x, np.asarray(z)[None, ...])[0])


def log_accept_prob(rp: ResampledProposal, x, z) -> float:
    return float(rp.log_accept_prob(x, np.asarray(z)[None, ...])[0])


def log_unnorm_density(rp: ResampledProposal, x, z) -> float:
    return float(rp.log_unnorm_density(x, np.asarray(z)[None, ...])[0])


def sample_resampled(rp: ResampledProposal, x, rng):
    """One draw from the resampled proposal as ``(z, attempts)``."""
    batch = rp.sample(x, 1, rng)
    return batch.accepted[0], batch.attempts


def estimate_log_ZR(rp: ResampledProposal, x, rng, n: int) -> float:
    """Log of the mean acceptance probability over ``n`` fresh proposals."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not rp.rejects:
        return 0.0
    z = rp.proposal.sample(x, n, rng)
    return float(logsumexp(rp.log_accept_prob(x, z)) - math.log(n))
