import math

import numpy as np
import pytest

from vrs.errors import BudgetExhausted, ConfigError, FormatError, NumericError
from vrs.fixtures import grid_problem, tiny_sbn
from vrs.models import CategoricalProposal
from vrs.oracle import (exact_elbo, exact_log_evidence, exact_relbo, posterior_probs)
from vrs.resampler import ResampledProposal
from vrs.trainer import (Adam, SGDMomentum, TrainConfig, eval_is_bound, eval_rs_bound,
                         load_checkpoint, save_checkpoint, train)


def test_sgd_momentum_three_steps():
    opt = SGDMomentum(1, lr=0.1, momentum=0.5)
    p = np.zeros(1)
    out = []
    for g in (1.0, 2.0, -1.0):
        p = opt.update(p, np.array([g]))
        out.append(p[0])
    # v: 1, 2.5, 0.25
    np.testing.assert_allclose(out, [0.1, 0.35, 0.375], atol=1e-15)


def test_adam_three_steps():
    opt = Adam(1, lr=0.1)
    p = np.zeros(1)
    out = []
    for g in (1.0, 2.0, -1.0):
        p = opt.update(p, np.array([g]))
        out.append(p[0])
    np.testing.assert_allclose(out, [0.099999999, 0.1965182009718337, 0.23852713103181322], rtol=1e-12)


def test_config_validation():
    with pytest.raises(ConfigError) as info:
        TrainConfig(S=1).validate()
    assert info.value.field == "S"
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.5).validate()
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop").validate()
    cfg = TrainConfig.from_mapping({"gamma": "0.5", "refresh-steps": "10", "fixed_T": "inf"})
    assert cfg.gamma == 0.5 and cfg.refresh_steps == 10 and cfg.fixed_T == math.inf
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"nonsense": "1"})


def test_exact_gradient_ascent_is_monotone():
    model, q, x, space = tiny_sbn(np.random.default_rng(0), 5, 6, scale=0.5)
    values = []

    def record(step, m, p):
        values.append(exact_relbo(ResampledProposal(p, m), x, space))

    cfg = TrainConfig(epochs=100, batch_size=1, optimizer="sgd", lr=1e-3, fixed_T=math.inf,
                      exact_gradients=True)
    train(model, q, [x], cfg, space=space, on_step=record)
    assert len(values) == 100
    assert np.all(np.diff(values) > 0)


def _sbn_data(rng, n=12, d=6):
    return (rng.random((n, d)) < 0.4).astype(float)


def _small_run(**kw):
    rng = np.random.default_rng(0)
    model, q, _, _ = tiny_sbn(rng, 6, 4, scale=0.3)
    data = _sbn_data(rng)
    cfg = TrainConfig(gamma=0.8, N=20, S=3, epochs=3, batch_size=4, lr=1e-2, seed=7, **kw)
    return model, q, data, cfg


def test_training_is_deterministic():
    model, q, data, cfg = _small_run()
    a = train(model, q, data, cfg)
    b = train(model, q, data, cfg)
    np.testing.assert_array_equal(a.model.params.values, b.model.params.values)
    np.testing.assert_array_equal(a.proposal.params.values, b.proposal.params.values)
    for col in ("signal_mean", "accept_rate", "attempts", "grad_norm_theta", "grad_norm_phi"):
        np.testing.assert_array_equal(a.metrics.column(col), b.metrics.column(col))
    assert len(a.metrics) == 9 and a.step == 9
    assert np.all(np.isfinite(a.table.thresholds))
    header = a.metrics.to_csv().splitlines()[0]
    assert header == "schema_version,epoch,step,signal_mean,accept_rate,attempts,grad_norm_theta,grad_norm_phi,wall_ms"


def test_refresh_in_steps():
    model, q, data, cfg = _small_run(refresh_steps=2)
    res = train(model, q, data, cfg)
    assert np.all(np.isfinite(res.table.thresholds))
    assert res.table.refresh_every == 2


def test_checkpoint_resume_matches_uninterrupted_run(tmp_path):
    model, q, data, cfg = _small_run()
    full = train(model, q, data, cfg)
    cfg_short = TrainConfig(**{**vars(cfg), "epochs": 1})
    train(model, q, data, cfg_short, checkpoint_dir=str(tmp_path))
    ckpt = load_checkpoint(tmp_path / "checkpoint-0001.vrs")
    assert ckpt.header["epoch"] == 1 and ckpt.header["step"] == 3
    resumed = train(model, q, data, cfg, resume=ckpt)
    np.testing.assert_array_equal(resumed.model.params.values, full.model.params.values)
    np.testing.assert_array_equal(resumed.proposal.params.values, full.proposal.params.values)
    np.testing.assert_array_equal(resumed.table.thresholds, full.table.thresholds)


def test_checkpoint_round_trip_and_corruption(tmp_path):
    model, q, data, cfg = _small_run()
    res = train(model, q, data, TrainConfig(**{**vars(cfg), "epochs": 1}))
    path = tmp_path / "c.vrs"
    save_checkpoint(path, res.model, res.proposal, res.optimizer, res.table, 1, res.step, cfg)
    ck = load_checkpoint(path)
    m, p, table, epoch, step = ck.restore(model, q, Adam(len(model.params) + len(q.params), 1e-2))
    np.testing.assert_array_equal(m.params.values, res.model.params.values)
    np.testing.assert_array_equal(table.thresholds, res.table.thresholds)
    assert (epoch, step) == (1, res.step)
    raw = path.read_bytes()
    (tmp_path / "bad.vrs").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError) as info:
        load_checkpoint(tmp_path / "bad.vrs")
    assert info.value.offset == 0
    (tmp_path / "short.vrs").write_bytes(raw[:-12])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short.vrs")
    other, other_q, _, _ = tiny_sbn(np.random.default_rng(0), 6, 5)
    with pytest.raises(FormatError):
        ck.restore(other, other_q)


def test_budget_error_carries_epoch_and_datapoint():
    target, q, _ = grid_problem()
    cfg = TrainConfig(fixed_T=-80.0, max_attempts=20, batch_size=1, epochs=1, S=2)
    with pytest.raises(BudgetExhausted) as info:
        train(target, q, [None, None], cfg)
    assert info.value.context["epoch"] == 1 and "datapoint" in info.value.context


class _BrokenTarget:
    """Grid target whose gradient is non-finite."""

    def __init__(self, inner):
        self.inner = inner
        self.params = inner.params

    def with_params(self, v):
        return _BrokenTarget(self.inner.with_params(v))

    def log_joint(self, x, z):
        return self.inner.log_joint(x, z)

    def grad_log_joint_weighted(self, x, z, w):
        return np.full(len(self.params), np.nan)


def test_non_finite_gradient_aborts_with_diagnostics():
    target, q, _ = grid_problem()
    with pytest.raises(NumericError) as info:
        train(_BrokenTarget(target), q, [None], TrainConfig(fixed_T=math.inf, S=2))
    assert info.value.diagnostics["step"] == 1


def test_is_bound_examples():
    target, q, space = grid_problem()
    rng1, rng2 = np.random.default_rng(3), np.random.default_rng(3)
    z = q.sample(None, 1, rng2)
    assert eval_is_bound(target, q, None, 1, rng1) == pytest.approx(
        float(target.log_joint(None, z)[0] - q.log_prob(None, z)[0]), abs=1e-12)
    post = CategoricalProposal(np.log(posterior_probs(target, None, space)))
    log_z = exact_log_evidence(target, None, space)
    assert abs(eval_is_bound(target, post, None, 100_000, rng1) - log_z) < 0.01
    elbo = exact_elbo(target, q, None, space)
    vals = [eval_is_bound(target, q, None, 25, np.random.default_rng(s)) for s in range(100)]
    assert elbo - 0.05 <= np.mean(vals) <= log_z + 0.05


def test_rs_bound_matches_exact_relbo():
    target, q, space = grid_problem()
    rp = ResampledProposal(q, target, 0.0)
    rng = np.random.default_rng(0)
    vals = np.array([eval_rs_bound(rp, None, 1, 2000, rng) for _ in range(10_000)])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - exact_relbo(rp, None, space)) <= 3 * se


def test_rs_bound_tightens_as_threshold_drops():
    target, q, space = grid_problem()
    rng = np.random.default_rng(1)
    means = []
    for T in (math.inf, 5.0, 0.0, -5.0):
        rp = ResampledProposal(q, target, T)
        means.append(np.mean([eval_rs_bound(rp, None, 25, 2000, rng) for _ in range(200)]))
    assert np.all(np.diff(means) > 0)
    assert means[-1] <= exact_log_evidence(target, None, space) + 0.05
