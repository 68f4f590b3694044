"""Generative models and recognition proposals.

Every model and proposal works on *batches*: ``z`` has a leading sample axis
and ``x`` is either a single observation broadcast across the batch or one
observation per row. Two protocols are used throughout the package:

LatentModel
    ``params``, ``with_params(values)``, ``log_joint(x, z)``,
    ``grad_log_joint(x, z)`` (per-sample rows) and
    ``grad_log_joint_weighted(x, z, w)`` (the weighted sum of those rows).

Proposal
    ``params``, ``with_params(values)``, ``sample(x, n, rng)``,
    ``log_prob(x, z)``, ``grad_log_prob(x, z)`` and
    ``grad_log_prob_weighted(x, z, w)``.

The weighted forms let the gradient estimators avoid materialising an
``(n, P)`` matrix for large networks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln, logsumexp, softmax

from .errors import DomainError, ShapeError
from .params import ParamVector


def softplus(x):
    """``log(1 + exp(x))`` without overflow; maps +inf to +inf."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def log_sigmoid(x):
    return -softplus(-np.asarray(x, dtype=np.float64))


sigmoid = expit


def _check_binary(a, what):
    if not np.all((a == 0) | (a == 1)):
        raise DomainError(f"{what} must be binary")


def _check_rows(z, width, what):
    if z.ndim != 2 or z.shape[1] != width:
        raise ShapeError(f"{what} must have shape (n, {width}), got {z.shape}")


@dataclass(frozen=True)
class BernoulliLayer:
    """Independent Bernoulli units with mean ``sigmoid(weights @ h + bias)``.

    ``weights`` is ``None`` for a bias-only prior layer.
    """

    weights: np.ndarray | None
    bias: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.bias.shape[0]

    @property
    def in_dim(self) -> int:
        return 0 if self.weights is None else self.weights.shape[1]

    def logits(self, h, n):
        if self.weights is None:
            return np.broadcast_to(self.bias, (n, self.out_dim))
        if h.shape[0] > 1 and h.strides[0] == 0:
            # one observation broadcast over the batch; stride-0 input defeats BLAS
            return np.broadcast_to(h[0] @ self.weights.T + self.bias, (n, self.out_dim))
        return h @ self.weights.T + self.bias

    def log_prob(self, y, h=None):
        logits = self.logits(h, y.shape[0])
        return np.sum(y * logits - softplus(logits), axis=1)

    def sample(self, h, n, rng):
        p = sigmoid(self.logits(h, n))
        return (rng.random(p.shape) < p).astype(np.float64)

    def score(self, y, h=None):
        """Per-sample ``(d/dW, d/db)`` of ``log_prob``."""
        delta = y - sigmoid(self.logits(h, y.shape[0]))
        dW = None if self.weights is None else delta[:, :, None] * h[:, None, :]
        return dW, delta

    def score_weighted(self, y, h, w):
        delta = (y - sigmoid(self.logits(h, y.shape[0]))) * w[:, None]
        dW = None if self.weights is None else delta.T @ h
        return dW, delta.sum(axis=0)


class SigmoidBeliefNet:
    """A stack of Bernoulli layers, used either as p(x, z) or as q(z | x).

    ``sizes = [d_obs, d_1, ..., d_L]`` where ``d_1`` is the latent layer next
    to the observations. Latent samples are the concatenation
    ``[z_1, ..., z_L]``.

    In the generative direction the top layer ``z_L`` has a bias-only prior
    and each layer ``z_l`` parameterises ``z_{l-1}`` (with ``z_0 = x``). The
    recognition direction runs the same widths in reverse, ``x -> z_1 -> ...``.
    """

    def __init__(self, sizes: Sequence[int], direction: str, params: ParamVector | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError("sizes needs an observed width and at least one latent width")
        if direction not in ("generative", "recognition"):
            raise ValueError(f"unknown direction {direction!r}")
        self.sizes = tuple(sizes)
        self.direction = direction
        self.obs_dim = sizes[0]
        self.latent_dim = sum(sizes[1:])
        self._bounds = np.concatenate([[0], np.cumsum(sizes[1:])])
        layout = self._layout()
        if params is None:
            params = ParamVector(np.zeros(sum(int(np.prod(s)) for _, s in layout)), layout)
        elif params.layout != tuple((n, tuple(s)) for n, s in layout):
            raise ShapeError("parameter layout does not match network sizes")
        self.params = params

    def _layout(self):
        s = self.sizes
        L = len(s) - 1
        if self.direction == "generative":
            layout = [("prior.b", (s[L],))]
            for l in range(L, 0, -1):
                layout += [(f"gen{l}.W", (s[l - 1], s[l])), (f"gen{l}.b", (s[l - 1],))]
        else:
            layout = []
            for l in range(1, L + 1):
                layout += [(f"rec{l}.W", (s[l], s[l - 1])), (f"rec{l}.b", (s[l],))]
        return layout

    @classmethod
    def initialize(cls, sizes, direction, rng, scale=0.05):
        """Weights uniform on ``(-scale, scale)``, biases zero."""
        net = cls(sizes, direction)
        values = np.zeros(len(net.params))
        for name, _ in net.params.layout:
            if name.endswith(".W"):
                sl = net.params.slice_of(name)
                values[sl] = rng.uniform(-scale, scale, size=sl.stop - sl.start)
        return net.with_params(values)

    def with_params(self, values) -> "SigmoidBeliefNet":
        return SigmoidBeliefNet(self.sizes, self.direction, self.params.like(values))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def latent_block(self, z, l):
        """Columns of ``z`` holding latent layer ``l`` (1-indexed)."""
        return z[:, self._bounds[l - 1]:self._bounds[l]]

    @property
    def layers(self) -> list[tuple[str, BernoulliLayer]]:
        """``(prefix, layer)`` pairs in sampling order."""
        p = self.params
        L = self.n_layers
        if self.direction == "generative":
            out = [("prior", BernoulliLayer(None, p["prior.b"]))]
            out += [(f"gen{l}", BernoulliLayer(p[f"gen{l}.W"], p[f"gen{l}.b"])) for l in range(L, 0, -1)]
        else:
            out = [(f"rec{l}", BernoulliLayer(p[f"rec{l}.W"], p[f"rec{l}.b"])) for l in range(1, L + 1)]
        return out

    def _prepare(self, x, z):
        z = np.asarray(z, dtype=np.float64)
        _check_rows(z, self.latent_dim, "z")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            if x.shape[0] != self.obs_dim:
                raise ShapeError(f"x must have length {self.obs_dim}, got {x.shape[0]}")
            x = np.broadcast_to(x, (z.shape[0], self.obs_dim))
        else:
            _check_rows(x, self.obs_dim, "x")
            if x.shape[0] != z.shape[0]:
                raise ShapeError("x and z batches differ in length")
        _check_binary(x, "x")
        _check_binary(z, "z")
        return x, z

    def _factors(self, x, z):
        """Yield ``(prefix, layer, input, output)`` for every Bernoulli factor."""
        L = self.n_layers
        if self.direction == "generative":
            for (prefix, layer), l in zip(self.layers, [L] + list(range(L, 0, -1))):
                if prefix == "prior":
                    yield prefix, layer, None, self.latent_block(z, L)
                else:
                    out = x if l == 1 else self.latent_block(z, l - 1)
                    yield prefix, layer, self.latent_block(z, l), out
        else:
            for (prefix, layer), l in zip(self.layers, range(1, L + 1)):
                inp = x if l == 1 else self.latent_block(z, l - 1)
                yield prefix, layer, inp, self.latent_block(z, l)

    def _log_prob(self, x, z):
        x, z = self._prepare(x, z)
        return sum(layer.log_prob(y, h) for _, layer, h, y in self._factors(x, z))

    def _grad(self, x, z):
        x, z = self._prepare(x, z)
        out = np.zeros((z.shape[0], len(self.params)))
        for prefix, layer, h, y in self._factors(x, z):
            dW, db = layer.score(y, h)
            if dW is not None:
                out[:, self.params.slice_of(prefix + ".W")] = dW.reshape(z.shape[0], -1)
            out[:, self.params.slice_of(prefix + ".b")] = db
        return out

    def _grad_weighted(self, x, z, w):
        x, z = self._prepare(x, z)
        w = np.asarray(w, dtype=np.float64)
        out = np.zeros(len(self.params))
        for prefix, layer, h, y in self._factors(x, z):
            dW, db = layer.score_weighted(y, h, w)
            if dW is not None:
                out[self.params.slice_of(prefix + ".W")] = dW.ravel()
            out[self.params.slice_of(prefix + ".b")] = db
        return out

    # generative protocol
    def log_joint(self, x, z):
        self._require("generative")
        return self._log_prob(x, z)

    def grad_log_joint(self, x, z):
        self._require("generative")
        return self._grad(x, z)

    def grad_log_joint_weighted(self, x, z, w):
        self._require("generative")
        return self._grad_weighted(x, z, w)

    def sample_joint(self, n, rng):
        """Ancestral samples ``(x, z)`` from the generative network."""
        self._require("generative")
        L = self.n_layers
        z = np.zeros((n, self.latent_dim))
        h = None
        for (prefix, layer), l in zip(self.layers, [L] + list(range(L, 0, -1))):
            y = layer.sample(h, n, rng)
            if prefix == "prior":
                z[:, self._bounds[L - 1]:self._bounds[L]] = y
            elif l > 1:
                z[:, self._bounds[l - 2]:self._bounds[l - 1]] = y
            else:
                return y, z
            h = y
        raise AssertionError("unreachable")

    # recognition protocol
    def sample(self, x, n, rng):
        self._require("recognition")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = np.broadcast_to(x, (n, x.shape[0]))
        _check_rows(x, self.obs_dim, "x")
        z = np.empty((n, self.latent_dim))
        h = x
        for l, (_, layer) in enumerate(self.layers, start=1):
            h = layer.sample(h, n, rng)
            z[:, self._bounds[l - 1]:self._bounds[l]] = h
        return z

    def log_prob(self, x, z):
        self._require("recognition")
        return self._log_prob(x, z)

    def grad_log_prob(self, x, z):
        self._require("recognition")
        return self._grad(x, z)

    def grad_log_prob_weighted(self, x, z, w):
        self._require("recognition")
        return self._grad_weighted(x, z, w)

    def _require(self, direction):
        if self.direction != direction:
            raise TypeError(f"operation needs a {direction} network, this one is {self.direction}")

    def __repr__(self):
        return f"SigmoidBeliefNet({list(self.sizes)}, {self.direction!r})"


def _as_index(z, size, what="z"):
    z = np.asarray(z)
    if z.ndim != 1:
        raise ShapeError(f"{what} must be a 1-D batch of indices, got shape {z.shape}")
    if z.size and not np.all(np.equal(np.mod(z, 1), 0)):
        raise DomainError(f"{what} must hold integers")
    z = z.astype(np.int64)
    if size is not None and z.size and (z.min() < 0 or z.max() >= size):
        raise DomainError(f"{what} outside 0..{size - 1}")
    if size is None and z.size and z.min() < 0:
        raise DomainError(f"{what} must be non-negative")
    return z


class GridTarget:
    """Unnormalised target on an ``n x n`` grid; ``z`` is the flat cell index.

    The log-weights themselves are the parameters, so the score of a cell is
    its one-hot indicator. ``x`` is ignored.
    """

    def __init__(self, log_weights):
        lw = np.asarray(log_weights, dtype=np.float64)
        if lw.ndim != 2 or lw.shape[0] != lw.shape[1]:
            raise ShapeError("log_weights must be a square 2-D array")
        if not np.any(np.isfinite(lw)):
            raise DomainError("log_weights needs at least one finite entry")
        self.log_weights = lw
        self.params = ParamVector(np.where(np.isfinite(lw), lw, 0.0), [("log_weights", lw.shape)])

    @property
    def size(self) -> int:
        return self.log_weights.size

    def with_params(self, values):
        values = np.reshape(np.asarray(values, dtype=np.float64), self.log_weights.shape)
        return GridTarget(np.where(np.isfinite(self.log_weights), values, -np.inf))

    def log_joint(self, x, z):
        return self.log_weights.ravel()[_as_index(z, self.size)]

    def grad_log_joint(self, x, z):
        z = _as_index(z, self.size)
        return np.eye(self.size)[z]

    def grad_log_joint_weighted(self, x, z, w):
        z = _as_index(z, self.size)
        return np.bincount(z, weights=np.asarray(w, dtype=np.float64), minlength=self.size)

    def log_partition(self):
        return float(logsumexp(self.log_weights))


class CategoricalProposal:
    """Softmax distribution over ``K`` outcomes with free logits."""

    def __init__(self, logits):
        logits = np.asarray(logits, dtype=np.float64).ravel()
        self.params = ParamVector(logits, [("logits", logits.shape)])
        self._log_probs = logits - logsumexp(logits)

    @classmethod
    def uniform(cls, k):
        return cls(np.zeros(k))

    @property
    def size(self) -> int:
        return self._log_probs.size

    def with_params(self, values):
        return CategoricalProposal(values)

    def sample(self, x, n, rng):
        return rng.choice(self.size, size=n, p=np.exp(self._log_probs))

    def log_prob(self, x, z):
        return self._log_probs[_as_index(z, self.size)]

    def grad_log_prob(self, x, z):
        z = _as_index(z, self.size)
        return np.eye(self.size)[z] - softmax(self.params.values)

    def grad_log_prob_weighted(self, x, z, w):
        z = _as_index(z, self.size)
        w = np.asarray(w, dtype=np.float64)
        return np.bincount(z, weights=w, minlength=self.size) - w.sum() * softmax(self.params.values)


@dataclass(frozen=True)
class TruncatedPoissonTarget:
    """Poisson(rate) with the mass below ``cutoff`` replaced by ``floor_mass``.

    The result is unnormalised. ``support_cap`` bounds exact enumeration; the
    Poisson(10) tail above 200 is far below double precision. There are no
    trainable parameters.
    """

    rate: float = 10.0
    cutoff: int = 5
    floor_mass: float = 1e-30
    support_cap: int = 200

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.cutoff < 0 or self.floor_mass < 0:
            raise ValueError("cutoff and floor_mass must be non-negative")

    @property
    def params(self) -> ParamVector:
        return ParamVector(np.zeros(0), [])

    def with_params(self, values):
        return self

    def log_joint(self, x, z):
        z = _as_index(z, None)
        poisson = z * np.log(self.rate) - self.rate - gammaln(z + 1.0)
        with np.errstate(divide="ignore"):
            floor = np.log(self.floor_mass)
        return np.where(z < self.cutoff, floor, poisson)

    def grad_log_joint(self, x, z):
        return np.zeros((_as_index(z, None).size, 0))

    def grad_log_joint_weighted(self, x, z, w):
        return np.zeros(0)


class PoissonProposal:
    """Poisson proposal with rate ``exp(phi)`` for an unconstrained scalar phi."""

    def __init__(self, phi):
        self.params = ParamVector([float(phi)], [("phi", ())])

    @property
    def phi(self) -> float:
        return float(self.params.values[0])

    @property
    def rate(self) -> float:
        return float(np.exp(self.phi))

    def with_params(self, values):
        return PoissonProposal(np.asarray(values).reshape(-1)[0])

    def sample(self, x, n, rng):
        return rng.poisson(self.rate, size=n).astype(np.int64)

    def log_prob(self, x, z):
        z = _as_index(z, None)
        return z * self.phi - self.rate - gammaln(z + 1.0)

    def grad_log_prob(self, x, z):
        z = _as_index(z, None)
        return (z - self.rate).astype(np.float64)[:, None]

    def grad_log_prob_weighted(self, x, z, w):
        z = _as_index(z, None)
        return np.array([np.dot(np.asarray(w, dtype=np.float64), z - self.rate)])


# Single-point convenience wrappers. ``z`` here is one latent configuration.

def _single(z):
    return np.asarray(z)[None, ...]


def log_joint(model, x, z) -> float:
    """``log p(x, z)`` for a single latent configuration."""
    return float(model.log_joint(x, _single(z))[0])


def grad_theta_log_joint(model, x, z) -> ParamVector:
    return model.params.like(model.grad_log_joint(x, _single(z))[0])


def proposal_sample(q, x, rng):
    """One draw from ``q(. | x)``."""
    return q.sample(x, 1, rng)[0]


def log_q(q, x, z) -> float:
    return float(q.log_prob(x, _single(z))[0])


def grad_phi_log_q(q, x, z) -> ParamVector:
    return q.params.like(q.grad_log_prob(x, _single(z))[0])
