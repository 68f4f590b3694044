"""Training loop, optimizers, test-time bounds and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetExhausted, ConfigError, FormatError, NumericError
from .grad import relbo_grad_estimate, relbo_grad_exact, signals
from .oracle import exact_ZR
from .resampler import DEFAULT_MAX_ATTEMPTS, ResampledProposal, estimate_log_ZR
from .threshold import ThresholdTable, refresh_table

METRICS_SCHEMA_VERSION = 1
METRICS_COLUMNS = ("epoch", "step", "signal_mean", "accept_rate", "attempts",
                   "grad_norm_theta", "grad_norm_phi", "wall_ms")


@dataclass
class TrainConfig:
    gamma: float = 0.9
    refresh_epochs: int = 1
    # when set, thresholds refresh every this many optimizer steps instead
    refresh_steps: Optional[int] = None
    N: int = 100
    S: int = 5
    epochs: int = 1
    batch_size: int = 50
    optimizer: str = "adam"
    lr: float = 3e-4
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    # a fixed threshold disables the quantile table; math.inf disables rejection
    fixed_T: Optional[float] = None
    exact_gradients: bool = False

    def validate(self) -> "TrainConfig":
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma", "must lie in (0, 1]")
        for name in ("refresh_epochs", "N", "epochs", "batch_size", "max_attempts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.refresh_steps is not None and self.refresh_steps < 1:
            raise ConfigError("refresh_steps", "must be a positive integer")
        if self.S < 2:
            raise ConfigError("S", "must be at least 2")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer", "must be 'sgd' or 'adam'")
        if not self.lr > 0:
            raise ConfigError("lr", "must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum", "must lie in [0, 1)")
        if self.fixed_T is not None and (math.isnan(self.fixed_T) or self.fixed_T == -math.inf):
            raise ConfigError("fixed_T", "must be finite or +inf")
        return self

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string-valued settings, e.g. a key=value file."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in types:
                raise ConfigError(key, "unknown setting")
            kwargs[name] = _coerce(name, raw, types[name])
        return cls(**kwargs).validate()


def _coerce(name, raw, type_name):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if "bool" in type_name:
            if text.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("1", "true", "yes")
        if "Optional" in type_name and text.lower() in ("", "none"):
            return None
        if "int" in type_name:
            return int(text)
        if "float" in type_name:
            return float(text)
    except ValueError:
        raise ConfigError(name, f"cannot parse {raw!r}") from None
    return text


class SGDMomentum:
    """Heavy-ball ascent: ``v <- mu v + g``; ``params <- params + lr v``."""

    kind = "sgd"

    def __init__(self, size, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity = np.zeros(size)
        self.step_count = 0

    def update(self, params, grad):
        self.velocity = self.momentum * self.velocity + grad
        self.step_count += 1
        return params + self.lr * self.velocity

    def state(self):
        return {"velocity": self.velocity}

    def load_state(self, arrays, step_count):
        self.velocity = np.array(arrays["velocity"])
        self.step_count = step_count


class Adam:
    """Bias-corrected Adam, applied as an ascent step."""

    kind = "adam"

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step_count = 0

    def update(self, params, grad):
        self.step_count += 1
        t = self.step_count
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** t)
        v_hat = self.v / (1 - self.beta2 ** t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self):
        return {"m": self.m, "v": self.v}

    def load_state(self, arrays, step_count):
        self.m = np.array(arrays["m"])
        self.v = np.array(arrays["v"])
        self.step_count = step_count


def make_optimizer(config: TrainConfig, size: int):
    if config.optimizer == "sgd":
        return SGDMomentum(size, config.lr, config.momentum)
    return Adam(size, config.lr, config.beta1, config.beta2, config.eps)


class TrainMetrics:
    """Append-only per-update records."""

    def __init__(self):
        self.records: list[dict] = []

    def append(self, **record):
        self.records.append({k: record[k] for k in METRICS_COLUMNS})

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def signal_slope(self) -> float:
        """Least-squares slope of the per-step mean learning signal."""
        y = self.column("signal_mean")
        return float(np.polyfit(np.arange(y.size), y, 1)[0])

    def write_csv(self, fh):
        w = csv.writer(fh)
        w.writerow(("schema_version",) + METRICS_COLUMNS)
        for r in self.records:
            w.writerow([METRICS_SCHEMA_VERSION] + [_fmt(r[c]) for c in METRICS_COLUMNS])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(buf.getvalue())
        return buf.getvalue()


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


@dataclass
class TrainResult:
    model: object
    proposal: object
    table: Optional[ThresholdTable]
    metrics: TrainMetrics
    optimizer: object
    epoch: int = 0
    step: int = 0


def _stream(seed, *keys):
    return np.random.default_rng([int(seed)] + [int(k) for k in keys])


def train(model, proposal, dataset, config: TrainConfig, *, space=None, checkpoint_dir=None,
          resume: "Checkpoint | None" = None, on_step=None) -> TrainResult:
    """Maximise the resampled bound over ``dataset`` with minibatch updates.

    Each datapoint gets ``S`` accepted samples drawn with its own random
    stream derived from ``(seed, epoch, index)``; the per-datapoint gradient
    estimates are averaged over the minibatch and applied as one ascent step.
    ``space`` is required when ``config.exact_gradients`` is set.
    """
    config.validate()
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    if config.exact_gradients and space is None:
        raise ConfigError("exact_gradients", "needs an enumerable space")
    K = len(dataset)
    n_theta = len(model.params)
    optimizer = make_optimizer(config, n_theta + len(proposal.params))
    table = None if config.fixed_T is not None else ThresholdTable.initial(
        K, config.gamma, config.refresh_steps or config.refresh_epochs, config.N)
    metrics = TrainMetrics()
    start_epoch, step = 1, 0
    if resume is not None:
        model, proposal, table, start_epoch, step = resume.restore(model, proposal, optimizer)
        start_epoch += 1
    params = np.concatenate([model.params.values, proposal.params.values])
    states = None if space is None else getattr(space, "states", space)

    for epoch in range(start_epoch, config.epochs + 1):
        if table is not None and config.refresh_steps is None and epoch % config.refresh_epochs == 0:
            table = refresh_table(table, proposal, model, dataset, _stream(config.seed, epoch, K, 1))
        order = _stream(config.seed, epoch, K, 2).permutation(K)
        for start in range(0, K, config.batch_size):
            if table is not None and config.refresh_steps is not None and (step + 1) % config.refresh_steps == 0:
                table = refresh_table(table, proposal, model, dataset, _stream(config.seed, epoch, K, 3, step))
            tic = time.perf_counter()
            batch = order[start:start + config.batch_size]
            g = np.zeros_like(params)
            sig_sum, accepted, attempts = 0.0, 0, 0
            for idx in batch:
                T = config.fixed_T if table is None else table[idx]
                rp = ResampledProposal(proposal, model, T, config.max_attempts)
                x = dataset[idx]
                try:
                    if config.exact_gradients:
                        est = relbo_grad_exact(rp, x, states)
                        accepted += 1
                        attempts += 1 / exact_ZR(rp, x, states)
                    else:
                        est = relbo_grad_estimate(rp, x, _stream(config.seed, epoch, idx), config.S)
                        accepted += est.sample_count
                        attempts += est.attempts
                except BudgetExhausted as err:
                    raise err.with_context(epoch=epoch, datapoint=int(idx)) from None
                except NumericError as err:
                    raise NumericError(str(err), {**err.diagnostics, "epoch": epoch, "step": step + 1,
                                                  "datapoint": int(idx), "T": T}) from None
                g[:n_theta] += est.d_theta.values
                g[n_theta:] += est.d_phi.values
                sig_sum += est.signal_mean
            g /= len(batch)
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient", {"epoch": epoch, "step": step + 1,
                                                          "batch": batch.tolist()})
            params = optimizer.update(params, g)
            if not np.all(np.isfinite(params)):
                raise NumericError("non-finite parameters", {"epoch": epoch, "step": step + 1})
            model = model.with_params(params[:n_theta])
            proposal = proposal.with_params(params[n_theta:])
            step += 1
            metrics.append(
                epoch=epoch, step=step, signal_mean=sig_sum / len(batch),
                accept_rate=accepted / attempts, attempts=attempts,
                grad_norm_theta=float(np.linalg.norm(g[:n_theta])),
                grad_norm_phi=float(np.linalg.norm(g[n_theta:])),
                wall_ms=1000.0 * (time.perf_counter() - tic),
            )
            if on_step is not None:
                on_step(step, model, proposal)
        if checkpoint_dir is not None:
            save_checkpoint(f"{checkpoint_dir}/checkpoint-{epoch:04d}.vrs", model, proposal,
                            optimizer, table, epoch, step, config)
    return TrainResult(model, proposal, table, metrics, optimizer, config.epochs, step)


def eval_is_bound(model, proposal, x, k: int, rng) -> float:
    """``log (1/k) sum_i p(x, z_i) / q(z_i|x)`` with ``z_i ~ q``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    z = proposal.sample(x, k, rng)
    w = model.log_joint(x, z) - proposal.log_prob(x, z)
    return float(logsumexp(w) - math.log(k))


def eval_rs_bound(rp: ResampledProposal, x, k_accepted: int, n_Z: int, rng) -> float:
    """Mean learning signal over accepted samples plus an estimate of ``log Z_R``."""
    if k_accepted < 1 or n_Z < 1:
        raise ValueError("k_accepted and n_Z must be at least 1")
    batch = rp.sample(x, k_accepted, rng)
    s = signals(rp, x, batch.accepted)
    return float(np.mean(s.A)) + estimate_log_ZR(rp, x, rng, n_Z)


# checkpoints: magic, version, header length, JSON header, float64 payload

CHECKPOINT_MAGIC = b"VRSCKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, proposal, optimizer, table, epoch, step, config=None):
    arrays = {"theta": model.params.values, "phi": proposal.params.values}
    arrays.update({f"opt.{k}": v for k, v in optimizer.state().items()})
    if table is not None:
        arrays["thresholds"] = table.thresholds
    header = {
        "theta_layout": [[n, list(s)] for n, s in model.params.layout],
        "phi_layout": [[n, list(s)] for n, s in proposal.params.layout],
        "theta_hash": model.params.layout_hash(),
        "phi_hash": proposal.params.layout_hash(),
        "optimizer": optimizer.kind,
        "optimizer_step": optimizer.step_count,
        "epoch": int(epoch),
        "step": int(step),
        "table": None if table is None else {
            "gamma": table.gamma, "refresh_every": table.refresh_every,
            "est_samples": table.est_samples},
        "config": None if config is None else asdict(config),
        "arrays": [[k, int(np.size(v))] for k, v in arrays.items()],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.asarray(v, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    header: dict
    arrays: dict = field(default_factory=dict)

    def restore(self, model, proposal, optimizer=None):
        """Apply stored parameters to models with a matching layout."""
        h = self.header
        if model.params.layout_hash() != h["theta_hash"] or proposal.params.layout_hash() != h["phi_hash"]:
            raise FormatError("checkpoint layout does not match the models", 0)
        model = model.with_params(self.arrays["theta"])
        proposal = proposal.with_params(self.arrays["phi"])
        if optimizer is not None:
            if optimizer.kind != h["optimizer"]:
                raise ConfigError("optimizer", f"checkpoint was written by {h['optimizer']}")
            opt = {k[4:]: v for k, v in self.arrays.items() if k.startswith("opt.")}
            optimizer.load_state(opt, h["optimizer_step"])
        table = None
        if h["table"] is not None:
            table = ThresholdTable(self.arrays["thresholds"], **h["table"])
        return model, proposal, table, h["epoch"], h["step"]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    if len(data) < 16:
        raise FormatError("truncated checkpoint header", len(data))
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    if len(data) < 16 + hlen:
        raise FormatError("truncated checkpoint header", len(data))
    try:
        header = json.loads(data[16:16 + hlen])
    except ValueError:
        raise FormatError("corrupt checkpoint header", 16) from None
    offset = 16 + hlen
    arrays = {}
    for name, size in header["arrays"]:
        end = offset + 8 * size
        if end > len(data):
            raise FormatError(f"truncated array {name!r}", offset)
        arrays[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64)
        offset = end
    return Checkpoint(header, arrays)
