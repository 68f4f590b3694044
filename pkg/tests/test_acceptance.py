"""Acceptance criteria, each at its stated tolerance and runtime budget.

Run with ``pytest tests/test_acceptance.py``; a summary line per criterion is
printed at the end of the session.
"""

import csv
import itertools
import json
import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import chisquare

from vrs import cli
from vrs.data import digits_standin, write_idx
from vrs.fixtures import grid_problem, poisson_problem, tiny_sbn
from vrs.grad import leave_one_out_cov, relbo_grad_batches, relbo_grad_exact, relbo_grad_from_samples
from vrs.models import PoissonProposal, TruncatedPoissonTarget
from vrs.oracle import (exact_kl_Q_P, exact_kl_R_P, exact_quantile, exact_relbo, exact_ZR, fd_grad,
                        kl_from_signal, resampled_probs)
from vrs.resampler import ResampledProposal
from vrs.trainer import TrainConfig, eval_is_bound, eval_rs_bound, train

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(record_property):
    """``report(n, title)`` tags the test; ``report.detail(text)`` sets its summary detail."""

    class Reporter:
        def __call__(self, n, title):
            record_property("criterion", str(n))
            record_property("title", title)
            self.t0 = time.perf_counter()

        def detail(self, text):
            record_property("detail", f"{text}; {time.perf_counter() - self.t0:.1f}s")

        def elapsed(self):
            return time.perf_counter() - self.t0

    return Reporter()


def sbn_fixture():
    return tiny_sbn(np.random.default_rng(2024), visible=5, latent=8)


def quantile_thresholds(model, q, x, states, gammas=(0.9, 0.5)):
    """Exact gamma-quantiles of ``log q - log p`` under ``q``."""
    log_q = q.log_prob(x, states)
    ratios = log_q - model.log_joint(x, states)
    return [exact_quantile(ratios, np.exp(log_q), g) for g in gammas]


def test_criterion_1_monotone_kl_and_acceptance(report):
    report(1, "monotone exact KL(R||P) and Z_R over T on the 5x5 grid")
    target, q, space = grid_problem()
    Ts = [math.inf, 10.0, 5.0, 0.0, -2.0, -5.0]
    kl = [exact_kl_R_P(ResampledProposal(q, target, T), None, space) for T in Ts]
    zr = [exact_ZR(ResampledProposal(q, target, T), None, space) for T in Ts]
    kl_q = exact_kl_Q_P(q, target, None, space)
    report.detail("KL " + ", ".join(f"{v:.4g}" for v in kl) + " | Z_R " + ", ".join(f"{v:.4g}" for v in zr))
    assert all(a > b for a, b in zip(kl, kl[1:]))
    assert all(a > b for a, b in zip(zr, zr[1:]))
    assert abs(kl[0] - kl_q) <= 1e-10
    assert report.elapsed() < 1.0


def test_criterion_2_gradient_oracle(report):
    report(2, "exact-expectation gradients vs finite differences; sampled S=5 mean within 3 SE")
    model, q, x, space = sbn_fixture()
    states = space.states
    Ts = [math.inf] + quantile_thresholds(model, q, x, states)
    worst_rel, exceed, total, max_z = 0.0, 0, 0, 0.0
    for T in Ts:
        rp = ResampledProposal(q, model, T)
        exact = relbo_grad_exact(rp, x, states)
        fd_phi = fd_grad(lambda p: exact_relbo(ResampledProposal(q.with_params(p), model, T), x, states),
                         q.params.values, 1e-5)
        fd_theta = fd_grad(lambda p: exact_relbo(ResampledProposal(q, model.with_params(p), T), x, states),
                           model.params.values, 1e-5)
        g = np.concatenate([exact.d_theta.values, exact.d_phi.values])
        fd = np.concatenate([fd_theta, fd_phi])
        err = np.abs(g - fd)
        # relative per coordinate; a coordinate with fd == 0 must match exactly
        ok = err <= 1e-6 * np.abs(fd)
        assert ok.all(), f"T={T}: {np.sum(~ok)} coordinates off"
        nz = fd != 0
        worst_rel = max(worst_rel, float(np.max(err[nz] / np.abs(fd[nz]))))

        B = 100_000
        z = rp.sample(x, 5 * B, np.random.default_rng([1, 7])).accepted.reshape(B, 5, -1)
        est = np.vstack([np.hstack(relbo_grad_batches(rp, x, z[c:c + 10_000])) for c in range(0, B, 10_000)])
        one = relbo_grad_from_samples(rp, x, z[0])
        np.testing.assert_allclose(est[0], np.concatenate([one.d_theta.values, one.d_phi.values]), atol=1e-12)
        mean = est.mean(axis=0)
        se = est.std(axis=0, ddof=1) / math.sqrt(B)
        dev = np.abs(mean - g)
        exceed += int(np.sum(dev > 3 * se))
        total += g.size
        pos = se > 0
        max_z = max(max_z, float(np.max(dev[pos] / se[pos])))
    report.detail(f"T in inf,{Ts[1]:.3f},{Ts[2]:.3f}; max FD rel err {worst_rel:.1e}; "
                  f"{exceed}/{total} coords beyond 3 SE, max |z| {max_z:.2f}")
    assert exceed == 0
    assert report.elapsed() < 120


def test_criterion_3_kl_identity(report):
    report(3, "KL(R||P) from the centred learning signal alone, grid/Poisson/SBN")
    problems = []
    target, q, space = grid_problem()
    problems.append(("grid", target, q, None, space, [math.inf, 0.0, -5.0]))
    target, q, space = poisson_problem(cap=200)
    problems.append(("poisson", target, q, None, space, [math.inf, 10.0, 0.0]))
    model, q, x, space = sbn_fixture()
    problems.append(("sbn", model, q, x, space, [math.inf] + quantile_thresholds(model, q, x, space.states)))
    worst = 0.0
    for name, m, q, x, space, Ts in problems:
        for T in Ts:
            rp = ResampledProposal(q, m, T)
            diff = abs(kl_from_signal(rp, x, space) - exact_kl_R_P(rp, x, space))
            worst = max(worst, diff)
            assert diff <= 1e-10, (name, T, diff)
    report.detail(f"max |difference| {worst:.1e} over 9 (fixture, T) pairs")
    assert report.elapsed() < 10


def test_criterion_4_leave_one_out_unbiased(report):
    report(4, "leave-one-out covariance unbiased: exhaustive S=2, Monte Carlo S=5")
    a_vals = np.array([0.3, -1.0, 2.5])
    b_vals = np.array([[1.0, 0.0], [-2.0, 1.0], [0.5, 3.0]])
    probs = np.array([0.2, 0.5, 0.3])
    true = probs @ ((a_vals - probs @ a_vals)[:, None] * (b_vals - probs @ b_vals))
    exp = np.zeros(2)
    for i, j in itertools.product(range(3), repeat=2):
        exp += probs[i] * probs[j] * leave_one_out_cov(a_vals[[i, j]], b_vals[[i, j]])
    exhaustive_err = float(np.max(np.abs(exp - true)))
    B = 100_000
    idx = np.random.default_rng(4).choice(3, size=(B, 5), p=probs)
    est = leave_one_out_cov(a_vals[idx], b_vals[idx])
    mean, se = est.mean(axis=0), est.std(axis=0, ddof=1) / math.sqrt(B)
    z = np.abs(mean - true) / se
    report.detail(f"exhaustive error {exhaustive_err:.1e}; Monte Carlo |z| {z.max():.2f}")
    assert exhaustive_err <= 1e-12
    assert np.all(z <= 3)
    assert report.elapsed() < 30


def test_criterion_5_sampler_exactness(report):
    report(5, "rejection sampler: chi-square vs enumerated R, acceptance rate vs Z_R")
    target, q, space = grid_problem()
    T = brentq(lambda t: exact_ZR(ResampledProposal(q, target, t), None, space) - 0.2, -10.0, 10.0, xtol=1e-12)
    rp = ResampledProposal(q, target, T)
    zr = exact_ZR(rp, None, space)
    batch = rp.sample(None, 1_000_000, np.random.default_rng(5))
    counts = np.bincount(batch.accepted, minlength=25).astype(float)
    expected = 1e6 * resampled_probs(rp, None, space)
    # pool cells with expected count below 5 into one bin
    small = expected < 5
    obs = np.append(counts[~small], counts[small].sum())
    exp = np.append(expected[~small], expected[small].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    stat, p = chisquare(obs, exp * obs.sum() / exp.sum())
    rate = batch.acceptance_rate
    report.detail(f"T={T:.4f}, Z_R={zr:.6f}, rate={rate:.5f}, chi2 p={p:.3f} over {len(obs)} bins")
    assert p > 0.01
    assert abs(rate - zr) <= 0.004
    assert report.elapsed() < 60


def test_criterion_6_toy_poisson(report):
    report(6, "toy Poisson: phi reaches log 10 within 20k steps, acceptance rises")
    target = TruncatedPoissonTarget(rate=10.0, cutoff=5)
    cfg = TrainConfig(fixed_T=50.0, optimizer="sgd", lr=0.01, momentum=0.5, S=5, epochs=20_000,
                      batch_size=1, seed=0)
    phis = []
    res = train(target, PoissonProposal(math.log(4.0)), [None], cfg,
                on_step=lambda step, m, q: phis.append(q.phi))
    phis = np.array(phis)
    err = np.abs(phis - math.log(10.0))
    reached = int(np.argmax(err <= 0.05)) + 1 if np.any(err <= 0.05) else None
    acc = res.metrics.column("accept_rate")
    k = len(acc) // 10
    first, last = acc[:k].mean(), acc[-k:].mean()
    report.detail(f"final phi {phis[-1]:.4f} (|err| {err[-1]:.4f}), band reached at step {reached}; "
                  f"acceptance first 10% {first:.4f}, last 10% {last:.4f}")
    assert err[-1] <= 0.05 and reached is not None
    assert last > first
    assert report.elapsed() < 120


def test_criterion_7_sbn_smoke(report, tmp_path, capsys):
    report(7, "SBN desk-scale smoke on 1,000 digit images (MNIST stand-in)")
    imgs, labels = digits_standin(n=1100)
    write_idx(tmp_path / "train-images.idx", imgs[:1000])
    write_idx(tmp_path / "test-images.idx", imgs[1000:1100])
    out = tmp_path / "run"
    code = cli.main(["train-sbn", "--data-images", str(tmp_path / "train-images.idx"), "--layers", "200",
                     "--gamma", "0.9", "--S", "5", "--batch-size", "50", "--optimizer", "adam",
                     "--lr", "3e-4", "--epochs", "5", "--seed", "0", "--out-dir", str(out)])
    capsys.readouterr()
    assert code == 0, "training failed (exit 5 means the sampler budget was exhausted)"
    meta = json.loads((out / "run.json").read_text())
    signal = np.array([float(r["signal_mean"]) for r in csv.DictReader(open(out / "metrics.csv"))])
    slope = float(np.polyfit(np.arange(signal.size), signal, 1)[0])

    summaries = {}
    for k in (1, 25):
        code = cli.main(["eval", "--checkpoint", str(out / "checkpoint-0005.vrs"),
                         "--data-images", str(tmp_path / "test-images.idx"), "--split", "test",
                         "--eval-k", str(k), "--nz", "1000", "--out-dir", str(tmp_path / f"eval{k}")])
        capsys.readouterr()
        assert code == 0
        summaries[k] = json.loads((tmp_path / f"eval{k}" / "eval_summary.json").read_text())
    is_mean, is_se = -summaries[1]["mean_neg_is"], summaries[1]["se_is"]
    rs_mean = -summaries[25]["mean_neg_rs"]
    report.detail(f"{meta['steps']} steps, signal slope {slope:.3f} ({signal[0]:.1f} -> {signal[-1]:.1f}); "
                  f"RS(25) {rs_mean:.2f} vs IS(k=1) {is_mean:.2f} - 3x{is_se:.2f}")
    assert meta["steps"] == 100
    assert slope > 0
    assert math.isfinite(rs_mean) and rs_mean >= is_mean - 3 * is_se
    assert report.elapsed() < 30 * 60


def test_criterion_8_reductions(report):
    report(8, "reductions at T = +inf")
    worst = 0.0
    target, q, space = grid_problem()
    cases = [(target, q, None, space.states)]
    target, q, space = poisson_problem()
    cases.append((target, q, None, space.states))
    model, q, x, space = sbn_fixture()
    cases.append((model, q, x, space.states))
    for m, q, x, states in cases:
        rp = ResampledProposal(q, m)
        worst = max(worst, float(np.max(np.abs(rp.log_unnorm_density(x, states) - q.log_prob(x, states)))))
    assert worst <= 1e-12

    rp = ResampledProposal(q, model)
    z = q.sample(x, 7, np.random.default_rng(0))
    est = relbo_grad_from_samples(rp, x, z)
    f = model.log_joint(x, z) - q.log_prob(x, z)
    baseline = (f - f.mean()) / 6.0 @ q.grad_log_prob(x, z)
    score_err = float(np.max(np.abs(est.d_phi.values - baseline)))
    assert score_err <= 1e-12

    rng = np.random.default_rng(8)
    n = 5_000
    rs = np.array([eval_rs_bound(rp, x, 1, 10, rng) for _ in range(n)])
    elbo1 = np.array([eval_is_bound(model, q, x, 1, rng) for _ in range(n)])
    se = math.hypot(rs.std(ddof=1), elbo1.std(ddof=1)) / math.sqrt(n)
    gap = abs(rs.mean() - elbo1.mean())
    report.detail(f"density error {worst:.1e}; score-function error {score_err:.1e}; "
                  f"RS-ELBO mean gap {gap:.4f} (3 SE = {3 * se:.4f})")
    assert gap <= 3 * se
    assert report.elapsed() < 10
