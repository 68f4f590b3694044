"""
Training a small sigmoid belief net end to end
==============================================

Writes digit images to IDX files, trains a one-layer SBN with quantile
thresholds through the command-line driver, then evaluates IS and RS
bounds on held-out images. Real MNIST files can be used instead by pointing
--data-images at train-images-idx3-ubyte.

Takes about a minute.
"""

import json
import os
import tempfile

from vrs import cli
from vrs.data import digits_standin, write_idx

work = tempfile.mkdtemp(prefix="vrs-demo-")
images, _ = digits_standin(n=1100)
write_idx(os.path.join(work, "train.idx"), images[:1000])
write_idx(os.path.join(work, "test.idx"), images[1000:])

run = os.path.join(work, "run")
cli.main(["train-sbn", "--data-images", os.path.join(work, "train.idx"), "--layers", "200",
          "--epochs", "5", "--gamma", "0.9", "--S", "5", "--batch-size", "50", "--lr", "3e-4",
          "--out-dir", run])
meta = json.load(open(os.path.join(run, "run.json")))
print("steps:", meta["steps"], " learning-signal slope per step:", round(meta["signal_slope"], 3))

# negative bounds in nats, lower is better
cli.main(["eval", "--checkpoint", os.path.join(run, "checkpoint-0005.vrs"),
          "--data-images", os.path.join(work, "test.idx"), "--split", "test",
          "--eval-k", "25", "--nz", "1000", "--out-dir", os.path.join(work, "eval")])
summary = json.load(open(os.path.join(work, "eval", "eval_summary.json")))
print("held-out -IS(25): %.2f +- %.2f" % (summary["mean_neg_is"], summary["se_is"]))
print("held-out -RS(25): %.2f +- %.2f" % (summary["mean_neg_rs"], summary["se_rs"]))
print("outputs in", work)
