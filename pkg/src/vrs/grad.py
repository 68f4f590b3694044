"""Covariance-form gradients of the resampled evidence bound.

For two unnormalised densities ``gamma_p`` and ``gamma_r`` with ``R`` the
normalised version of ``gamma_r``, the bound ``E_R[A] + log Z_R`` with
``A = log gamma_p - log gamma_r`` has gradients

    d/dphi   = COV_R(A, d log gamma_r / dphi)
    d/dtheta = E_R[d log gamma_p / dtheta] + COV_R(A, d log gamma_r / dtheta).

With ``gamma_r = q * a`` and the softplus acceptance function,
``A = log p - log q + softplus(l)``, ``d log gamma_r / dphi =
(1 - sigmoid(l)) dlog q`` and ``d log gamma_r / dtheta = sigmoid(l) dlog p``
(``l`` decreases as ``log p`` grows, so the acceptance term adds to the
direct score rather than subtracting from it).

Every covariance is written as ``sum_i c_i b_i`` with scalar coefficients
``c_i`` that depend only on the learning signal, so the same code serves the
leave-one-out Monte Carlo estimator (``c_i = (a_i - mean(a)) / (S - 1)``) and
exact expectations over an enumerated space (``c_i = r_i (a_i - E_R[a])``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .models import sigmoid, softplus
from .params import ParamVector
from .resampler import ResampledProposal


def covariance_coefficients(a, probs=None):
    """Coefficients ``c`` with ``COV(A, B) ~= sum_i c_i b_i``.

    Without ``probs`` this is the unbiased leave-one-out form for ``S >= 2``
    i.i.d. samples along the last axis; with ``probs`` it is the exact
    covariance under that distribution. Only ``A`` is centred.
    """
    a = np.asarray(a, dtype=np.float64)
    if probs is None:
        S = a.shape[-1]
        if S < 2:
            raise ValueError("covariance estimate needs at least 2 samples")
        centred = a - a.mean(axis=-1, keepdims=True)
        # a constant signal must give exactly zero, not rounding noise
        centred = np.where(np.ptp(a, axis=-1, keepdims=True) == 0, 0.0, centred)
        return centred / (S - 1)
    probs = np.asarray(probs, dtype=np.float64)
    return probs * (a - np.sum(probs * a, axis=-1, keepdims=True))


def leave_one_out_cov(a, b):
    """Unbiased covariance estimate ``1/(S-1) sum_i (a_i - mean(a)) b_i``.

    ``a`` has shape ``(..., S)`` and ``b`` shape ``(..., S, P)``; a list of
    ``ParamVector`` is accepted for ``b`` and gives a ``ParamVector`` back.
    """
    like = None
    if len(b) and isinstance(b[0], ParamVector):
        like = b[0]
        b = np.stack([v.values for v in b])
    c = covariance_coefficients(a)
    b = np.asarray(b, dtype=np.float64)
    out = np.einsum("...s,...sp->...p", c, b)
    return like.like(out) if like is not None else out


@dataclass(frozen=True)
class Signals:
    """Scalar per-sample quantities shared by all estimators."""

    log_p: np.ndarray
    log_q: np.ndarray
    l: np.ndarray

    @property
    def A(self):
        return self.log_p - self.log_q + softplus(self.l)

    @property
    def sig(self):
        return sigmoid(self.l)


def signals(rp: ResampledProposal, x, z) -> Signals:
    return Signals(*rp.terms(x, z))


@dataclass(frozen=True)
class SignalPair:
    """Learning signal and score terms for one latent sample."""

    A: float
    B_phi: ParamVector
    B_theta_cov: ParamVector
    B_theta_direct: ParamVector


def signal_pair(rp: ResampledProposal, x, z) -> SignalPair:
    zb = np.asarray(z)[None, ...]
    s = signals(rp, x, zb)
    sig = float(s.sig[0])
    g_q = rp.proposal.grad_log_prob(x, zb)[0]
    g_p = rp.model.grad_log_joint(x, zb)[0]
    return SignalPair(
        A=float(s.A[0]),
        B_phi=rp.proposal.params.like((1.0 - sig) * g_q),
        B_theta_cov=rp.model.params.like(sig * g_p),
        B_theta_direct=rp.model.params.like(g_p),
    )


@dataclass(frozen=True)
class GradEstimate:
    d_theta: ParamVector
    d_phi: ParamVector
    sample_count: int
    attempts: int
    signal_mean: float = float("nan")


def _weighted_grads(rp, x, z, s: Signals, coef, mean_weights):
    sig = s.sig
    d_phi = rp.proposal.grad_log_prob_weighted(x, z, coef * (1.0 - sig))
    d_theta = rp.model.grad_log_joint_weighted(x, z, mean_weights + coef * sig)
    return d_theta, d_phi


def _as_params(like, values, what):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite {what} gradient", {"bad_entries": int(np.sum(~np.isfinite(values)))})
    return like.like(values)


def relbo_grad_from_samples(rp: ResampledProposal, x, z, attempts=0) -> GradEstimate:
    """Gradient estimate from ``S >= 2`` samples already drawn from ``R``."""
    s = signals(rp, x, z)
    S = len(s.l)
    coef = covariance_coefficients(s.A)
    d_theta, d_phi = _weighted_grads(rp, x, z, s, coef, np.full(S, 1.0 / S))
    return GradEstimate(
        _as_params(rp.model.params, d_theta, "theta"),
        _as_params(rp.proposal.params, d_phi, "phi"),
        S,
        int(attempts),
        float(np.mean(s.A)),
    )


def relbo_grad_batches(rp: ResampledProposal, x, z):
    """Estimates for many independent batches at once.

    ``z`` has shape ``(B, S, ...)``; returns ``(d_theta, d_phi)`` arrays of
    shape ``(B, P_theta)`` and ``(B, P_phi)``, row ``b`` equal to
    :func:`relbo_grad_from_samples` on ``z[b]``.
    """
    z = np.asarray(z)
    B, S = z.shape[:2]
    flat = z.reshape((B * S,) + z.shape[2:])
    s = signals(rp, x, flat)
    coef = covariance_coefficients(s.A.reshape(B, S)).reshape(-1)
    w_phi = (coef * (1.0 - s.sig)).reshape(B, S, 1)
    w_theta = (1.0 / S + coef * s.sig).reshape(B, S, 1)
    g_q = rp.proposal.grad_log_prob(x, flat).reshape(B, S, -1)
    g_p = rp.model.grad_log_joint(x, flat).reshape(B, S, -1)
    return np.sum(w_theta * g_p, axis=1), np.sum(w_phi * g_q, axis=1)


def relbo_grad_estimate(rp: ResampledProposal, x, rng, S: int) -> GradEstimate:
    """Draw ``S`` samples from ``R`` and return the unbiased gradient estimate."""
    if S < 2:
        raise ValueError("S must be at least 2")
    batch = rp.sample(x, S, rng)
    return relbo_grad_from_samples(rp, x, batch.accepted, batch.attempts)


def relbo_grad_exact(rp: ResampledProposal, x, states) -> GradEstimate:
    """The same gradient formulas with expectations taken exactly over ``states``.

    ``states`` must cover the support of the proposal.
    """
    from .oracle import resampled_probs

    probs = resampled_probs(rp, x, states)
    s = signals(rp, x, states)
    coef = covariance_coefficients(s.A, probs)
    d_theta, d_phi = _weighted_grads(rp, x, states, s, coef, probs)
    return GradEstimate(
        _as_params(rp.model.params, d_theta, "theta"),
        _as_params(rp.proposal.params, d_phi, "phi"),
        len(probs),
        0,
        float(np.sum(probs * s.A)),
    )


def lemma1_grads(log_gamma_p, log_gamma_r, grad_log_gamma_r, grad_log_gamma_p=None,
                 log_ZR=0.0, probs=None):
    """Bound value and gradient for two unnormalised densities.

    All per-sample arrays are indexed by draws from ``R`` (or by enumerated
    states when ``probs`` gives their ``R`` probabilities). Returns
    ``(E_R[A] + log_ZR, COV_R(A, grad log gamma_r) + E_R[grad log gamma_p])``.
    """
    A = np.asarray(log_gamma_p, dtype=np.float64) - np.asarray(log_gamma_r, dtype=np.float64)
    coef = covariance_coefficients(A, probs)
    grad = coef @ np.asarray(grad_log_gamma_r, dtype=np.float64)
    mean_w = np.full(len(A), 1.0 / len(A)) if probs is None else np.asarray(probs)
    if grad_log_gamma_p is not None:
        grad = grad + mean_w @ np.asarray(grad_log_gamma_p, dtype=np.float64)
    return float(mean_w @ A + log_ZR), grad
