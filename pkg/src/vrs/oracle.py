"""Brute-force ground truth on small latent spaces.

Everything here enumerates the latent space explicitly and works in log
space, so it is only usable for grids, capped integer supports and binary
vectors of modest width. These functions are the reference the sampled
estimators are tested against.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import logsumexp

from .errors import OracleError
from .models import softplus
from .params import ParamVector

MAX_STATES = 2 ** 20


class EnumerableSpace:
    """An explicit batch of every latent state, in a fixed order."""

    def __init__(self, states):
        states = np.asarray(states)
        if len(states) > MAX_STATES:
            raise OracleError(f"space of {len(states)} states exceeds the {MAX_STATES} limit")
        if len(states) == 0:
            raise OracleError("space is empty")
        self.states = states

    @classmethod
    def binary(cls, d: int) -> "EnumerableSpace":
        """All ``2**d`` binary vectors in lexicographic order."""
        if 2 ** d > MAX_STATES:
            raise OracleError(f"2**{d} states exceeds the {MAX_STATES} limit")
        return cls(np.array(list(itertools.product([0.0, 1.0], repeat=d))).reshape(-1, d))

    @classmethod
    def integers(cls, cap: int) -> "EnumerableSpace":
        """``0, 1, ..., cap``."""
        return cls(np.arange(cap + 1))

    @classmethod
    def grid(cls, n: int) -> "EnumerableSpace":
        """Flat cell indices of an ``n x n`` grid."""
        return cls(np.arange(n * n))

    def __len__(self):
        return len(self.states)


def _states(space):
    return space.states if isinstance(space, EnumerableSpace) else np.asarray(space)


def _log_gamma_r(rp, x, states):
    return rp.log_unnorm_density(x, states)


def exact_log_ZR(rp, x, space) -> float:
    return float(logsumexp(_log_gamma_r(rp, x, _states(space))))


def exact_ZR(rp, x, space) -> float:
    """``E_Q[a]``, the expected acceptance probability."""
    return math.exp(exact_log_ZR(rp, x, space))


def resampled_probs(rp, x, space) -> np.ndarray:
    """Normalised resampled probabilities of every state."""
    lg = _log_gamma_r(rp, x, _states(space))
    return np.exp(lg - logsumexp(lg))


def posterior_probs(model, x, space) -> np.ndarray:
    lp = model.log_joint(x, _states(space))
    return np.exp(lp - logsumexp(lp))


def exact_log_evidence(model, x, space) -> float:
    """``log sum_z p(x, z)``."""
    return float(logsumexp(model.log_joint(x, _states(space))))


def _kl(log_a, log_b):
    """KL between the normalised versions of two unnormalised log-masses."""
    log_a = log_a - logsumexp(log_a)
    log_b = log_b - logsumexp(log_b)
    pa = np.exp(log_a)
    mask = pa > 0
    return float(np.sum(pa[mask] * (log_a[mask] - log_b[mask])))


def exact_kl_R_P(rp, x, space) -> float:
    """``KL(R || P)`` against the true posterior ``P(z|x)``."""
    states = _states(space)
    return _kl(_log_gamma_r(rp, x, states), rp.model.log_joint(x, states))


def exact_kl_Q_P(proposal, model, x, space) -> float:
    states = _states(space)
    return _kl(proposal.log_prob(x, states), model.log_joint(x, states))


def exact_elbo(model, proposal, x, space) -> float:
    """``E_Q[log p(x, z) - log q(z|x)]``."""
    states = _states(space)
    log_q = proposal.log_prob(x, states)
    q = np.exp(log_q)
    mask = q > 0
    return float(np.sum(q[mask] * (model.log_joint(x, states)[mask] - log_q[mask])))


def exact_relbo(rp, x, space) -> float:
    """``E_R[log p - log q + softplus(l)] + log Z_R``."""
    states = _states(space)
    log_p = rp.model.log_joint(x, states)
    log_q = rp.proposal.log_prob(x, states)
    l = rp.log_ratio(x, states)
    log_gr = log_q - softplus(l)
    log_zr = logsumexp(log_gr)
    r = np.exp(log_gr - log_zr)
    mask = r > 0
    return float(np.sum(r[mask] * (log_p[mask] - log_q[mask] + softplus(l[mask]))) + log_zr)


def exact_quantile(values, probs, gamma) -> float:
    """``inf {v : gamma <= F(v)}`` for a discrete law given by atoms and masses."""
    values = np.asarray(values, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    cdf = np.cumsum(probs[order]) / probs.sum()
    k = int(np.searchsorted(cdf, gamma - 1e-15, side="left"))
    return float(values[order][min(k, len(values) - 1)])


def kl_from_signal(rp, x, space) -> float:
    """``KL(R || P)`` through the centred learning signal alone.

    With ``A = log gamma_p - log gamma_r`` and ``A_bar = A - E_R[A]`` this is
    ``log E_R[exp(A_bar)]``; no normalising constant is needed.
    """
    states = _states(space)
    log_gr = _log_gamma_r(rp, x, states)
    log_r = log_gr - logsumexp(log_gr)
    r = np.exp(log_r)
    A = rp.model.log_joint(x, states) - log_gr
    keep = r > 0
    A_bar = A[keep] - np.sum(r[keep] * A[keep])
    return float(logsumexp(log_r[keep] + A_bar))


def fd_grad(fn, params, step: float = 1e-4):
    """Central finite differences of a scalar function of a parameter vector."""
    like = params if isinstance(params, ParamVector) else None
    base = np.array(params.values if like is not None else params, dtype=np.float64)
    out = np.empty_like(base)
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = fn(like.like(hi) if like is not None else hi)
        f_lo = fn(like.like(lo) if like is not None else lo)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise OracleError(f"non-finite function value at coordinate {i}")
        out[i] = (f_hi - f_lo) / (2.0 * step)
    return like.like(out) if like is not None else out
