"""Command-line drivers.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 non-finite numerics, 5 sampler budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import fixtures, oracle
from .data import ingest_idx
from .errors import BudgetExhausted, ConfigError, FormatError, NumericError, ShapeError
from .models import PoissonProposal, SigmoidBeliefNet, TruncatedPoissonTarget
from .resampler import ResampledProposal
from .trainer import TrainConfig, eval_is_bound, eval_rs_bound, load_checkpoint, train

SCHEMA_VERSION = 1

# flag name -> TrainConfig field
TRAIN_FLAGS = {
    "gamma": "gamma", "S": "S", "N": "N", "refresh_steps": "refresh_steps", "T": "fixed_T",
    "epochs": "epochs", "batch_size": "batch_size", "lr": "lr", "optimizer": "optimizer",
    "momentum": "momentum", "seed": "seed", "max_attempts": "max_attempts",
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` settings; ``#`` starts a comment."""
    settings = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}", "expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            settings[key.replace("-", "_")] = value
    return settings


def _settings(args, defaults: dict, extra=()) -> dict:
    """Defaults, then the config file, then explicit flags."""
    out = dict(defaults)
    if args.config:
        out.update(read_config_file(args.config))
    for name in list(TRAIN_FLAGS) + list(extra):
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    return out


def _train_config(settings: dict) -> TrainConfig:
    mapped = {}
    for key, value in settings.items():
        if key in TRAIN_FLAGS:
            mapped[TRAIN_FLAGS[key]] = value
        elif key in {f for f in TrainConfig.__dataclass_fields__}:
            mapped[key] = value
    return TrainConfig.from_mapping(mapped)


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _open_out(args, name):
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        return open(os.path.join(args.out_dir, name), "w", newline="")
    return _Stdout()


class _Stdout(io.StringIO):
    def __exit__(self, *exc):
        sys.stdout.write(self.getvalue())
        return super().__exit__(*exc)


def cmd_grid_kl(args):
    target, proposal, space = fixtures.grid_problem()
    with _open_out(args, "grid_kl.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "T", "exact_ZR", "exact_KL", "exact_RELBO"])
        for T in args.T:
            rp = ResampledProposal(proposal, target, T)
            w.writerow([SCHEMA_VERSION, repr(T), repr(oracle.exact_ZR(rp, None, space)),
                        repr(oracle.exact_kl_R_P(rp, None, space)),
                        repr(oracle.exact_relbo(rp, None, space))])
    return 0


TOY_DEFAULTS = {"T": 50.0, "optimizer": "sgd", "lr": 0.01, "momentum": 0.5, "S": 5,
                "epochs": 20_000, "seed": 0, "phi0": math.log(4.0), "rate": 10.0, "cutoff": 5}


def cmd_toy_poisson(args):
    s = _settings(args, TOY_DEFAULTS, extra=("phi0", "rate", "cutoff"))
    if args.steps is not None:
        s["epochs"] = args.steps
    phi0, rate, cutoff = float(s.pop("phi0")), float(s.pop("rate")), int(s.pop("cutoff"))
    s["batch_size"] = 1
    config = _train_config(s)
    target = TruncatedPoissonTarget(rate, cutoff)
    phis = []
    result = train(target, PoissonProposal(phi0), [None], config,
                   on_step=lambda step, m, q: phis.append(q.phi))
    m = result.metrics
    with _open_out(args, "toy_poisson.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "step", "phi", "phi_error", "accept_rate", "attempts",
                    "signal_mean", "grad_phi"])
        grad = m.column("grad_norm_phi")
        for i, rec in enumerate(m.records):
            w.writerow([SCHEMA_VERSION, rec["step"], repr(phis[i]), repr(phis[i] - math.log(rate)),
                        repr(rec["accept_rate"]), rec["attempts"], repr(rec["signal_mean"]),
                        repr(float(grad[i]))])
    return 0


SBN_DEFAULTS = {"gamma": 0.9, "S": 5, "N": 100, "batch_size": 50, "optimizer": "adam", "lr": 3e-4,
                "epochs": 5, "seed": 0, "layers": "200", "train_size": None, "binarize": "threshold"}


def _load_images(args, settings, split="train"):
    path = settings.get("data_images")
    if not path:
        raise ConfigError("data_images", "path to an IDX image file is required")
    if not os.path.exists(path):
        raise ConfigError("data_images", f"no such file: {path}")
    return ingest_idx(path, binarize_mode=settings.get("binarize", "threshold"),
                      seed=int(settings.get("seed", 0)), split=split)


def cmd_train_sbn(args):
    s = _settings(args, SBN_DEFAULTS, extra=("layers", "train_size", "binarize", "data_images"))
    data = _load_images(args, s)
    images = data.split("train")
    if s.get("train_size"):
        images = images[: int(s["train_size"])]
    try:
        widths = [int(v) for v in str(s.pop("layers")).split(",")]
    except ValueError:
        raise ConfigError("layers", "comma-separated integer widths expected") from None
    extras = {k: s.pop(k, None) for k in ("train_size", "binarize", "data_images")}
    config = _train_config(s)
    sizes = [images.shape[1]] + widths
    rng = np.random.default_rng(config.seed)
    model = SigmoidBeliefNet.initialize(sizes, "generative", rng)
    proposal = SigmoidBeliefNet.initialize(sizes, "recognition", rng)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(model, proposal, images, config, checkpoint_dir=out_dir, resume=resume)
    result.metrics.to_csv(os.path.join(out_dir, "metrics.csv"))
    if result.table is not None:
        result.table.save_csv(os.path.join(out_dir, "thresholds.csv"))
    meta = {"schema_version": SCHEMA_VERSION, "sizes": sizes, "config": vars(config),
            "data": data.source, "train_images": int(len(images)), "steps": result.step,
            "signal_slope": result.metrics.signal_slope(), **{k: v for k, v in extras.items()}}
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(meta, fh, indent=2, default=str)
    return 0


def sbn_from_checkpoint(ckpt):
    """Rebuild the generative/recognition pair described by a checkpoint header."""
    layout = dict((n, tuple(s)) for n, s in ckpt.header["theta_layout"])
    L = sum(1 for n in layout if n.endswith(".W"))
    sizes = [layout["gen1.W"][0]] + [layout[f"gen{l}.W"][1] for l in range(1, L + 1)]
    model = SigmoidBeliefNet(sizes, "generative")
    proposal = SigmoidBeliefNet(sizes, "recognition")
    model, proposal, table, _, _ = ckpt.restore(model, proposal)
    return model, proposal, table


def cmd_eval(args):
    if not args.checkpoint or not os.path.exists(args.checkpoint):
        raise ConfigError("checkpoint", f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    model, proposal, table = sbn_from_checkpoint(ckpt)
    s = {"seed": args.seed or 0, "binarize": args.binarize or "threshold",
         "data_images": args.data_images}
    data = _load_images(args, s, split=args.split)
    images = data.split(args.split)
    if args.limit:
        images = images[: args.limit]
    cfg = ckpt.header.get("config") or {}
    fixed_T = args.T if args.T is not None else cfg.get("fixed_T")
    k = args.eval_k
    rows = []
    for i, x in enumerate(images):
        rng = np.random.default_rng([s["seed"], i])
        if fixed_T is not None:
            T = float(fixed_T)
        elif table is not None:
            T = table.lookup_or_estimate(None, proposal, model, x, rng)
        else:
            T = math.inf
        rp = ResampledProposal(proposal, model, T, args.max_attempts or cfg.get("max_attempts", 10_000))
        is_b = eval_is_bound(model, proposal, x, k, rng)
        rs_b = eval_rs_bound(rp, x, k, args.nz, rng)
        rows.append((i, T, is_b, rs_b))
    arr = np.array([[r[2], r[3]] for r in rows])
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite bound", {})
    with _open_out(args, "eval.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "index", "T", "neg_is_bound", "neg_rs_bound"])
        for i, T, a, b in rows:
            w.writerow([SCHEMA_VERSION, i, repr(T), repr(-a), repr(-b)])
    n = len(rows)
    se = arr.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(2)
    summary = {"n": n, "eval_k": k, "mean_neg_is": float(-arr[:, 0].mean()), "se_is": float(se[0]),
               "mean_neg_rs": float(-arr[:, 1].mean()), "se_rs": float(se[1])}
    print(json.dumps(summary), file=sys.stderr)
    if args.out_dir:
        with open(os.path.join(args.out_dir, "eval_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="vrs", description="Variational rejection sampling drivers")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key=value settings file")
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--seed", type=int)

    def training(sp):
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--S", type=int)
        sp.add_argument("--N", type=int)
        sp.add_argument("--refresh-steps", dest="refresh_steps", type=int)
        sp.add_argument("--T", type=float, help="fixed threshold; disables the quantile table")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--optimizer", choices=["sgd", "adam"])
        sp.add_argument("--momentum", type=float)
        sp.add_argument("--max-attempts", dest="max_attempts", type=int)

    g = sub.add_parser("grid-kl", help="exact Z_R, KL and R-ELBO on the 5x5 grid fixture")
    common(g)
    g.add_argument("--T", type=_float_list, default=[math.inf, 10.0, 5.0, 0.0, -2.0, -5.0],
                   help="comma-separated thresholds, e.g. inf,10,0,-5")
    g.set_defaults(func=cmd_grid_kl)

    t = sub.add_parser("toy-poisson", help="fit a Poisson proposal to a truncated Poisson target")
    common(t)
    training(t)
    t.add_argument("--steps", type=int)
    t.add_argument("--phi0", type=float)
    t.add_argument("--rate", type=float)
    t.add_argument("--cutoff", type=int)
    t.set_defaults(func=cmd_toy_poisson)

    s = sub.add_parser("train-sbn", help="train a sigmoid belief network on IDX images")
    common(s)
    training(s)
    s.add_argument("--data-images", dest="data_images")
    s.add_argument("--binarize", choices=["threshold", "sample"])
    s.add_argument("--layers", help="comma-separated latent widths, nearest the data first")
    s.add_argument("--train-size", dest="train_size", type=int)
    s.add_argument("--resume", help="checkpoint to resume from")
    s.set_defaults(func=cmd_train_sbn)

    e = sub.add_parser("eval", help="IS and RS test bounds for a trained SBN")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data-images", dest="data_images")
    e.add_argument("--binarize", choices=["threshold", "sample"])
    e.add_argument("--split", default="test")
    e.add_argument("--eval-k", dest="eval_k", type=int, default=25)
    e.add_argument("--nz", type=int, default=1000, help="proposals used to estimate Z_R")
    e.add_argument("--T", type=float)
    e.add_argument("--limit", type=int)
    e.add_argument("--max-attempts", dest="max_attempts", type=int)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (FormatError, ShapeError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric error: {err} {err.diagnostics}", file=sys.stderr)
        return 4
    except BudgetExhausted as err:
        print(f"sampler error: {err}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
