"""
Fitting a Poisson proposal to a truncated Poisson target
========================================================

The target puts (almost) no mass below c = 5 and Poisson(10) mass above. A
Poisson(e^phi) proposal started at rate 4 is trained with a fixed threshold
T = 50; as phi approaches log 10 fewer proposals fall below the cutoff, so
the acceptance rate climbs.
"""

import math

import numpy as np

from vrs.models import PoissonProposal, TruncatedPoissonTarget
from vrs.trainer import TrainConfig, train

target = TruncatedPoissonTarget(rate=10.0, cutoff=5)
config = TrainConfig(fixed_T=50.0, optimizer="sgd", lr=0.01, momentum=0.5, S=5,
                     epochs=20_000, batch_size=1, seed=0)

phis = []
result = train(target, PoissonProposal(math.log(4.0)), [None], config,
               on_step=lambda step, model, q: phis.append(q.phi))

acc = result.metrics.column("accept_rate")
for step in (1, 10, 100, 1000, 5000, 20_000):
    window = acc[max(0, step - 500):step]
    print(f"step {step:>6}: phi = {phis[step - 1]:.4f}  rate = {math.exp(phis[step - 1]):.3f}  "
          f"mean acceptance (last 500) = {window.mean():.4f}")
print("target phi = log 10 =", round(math.log(10.0), 4))
k = len(acc) // 10
print("acceptance, first vs last 10% of steps:", round(acc[:k].mean(), 4), round(acc[-k:].mean(), 4))
