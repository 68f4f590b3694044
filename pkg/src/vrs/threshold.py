"""Per-datapoint thresholds set to a quantile of the proposal log-ratio.

For each observation the threshold is the ``gamma``-quantile of
``log q(z|x) - log p(x, z)`` under ``z ~ q``, estimated from ``N`` draws.
Roughly a ``gamma`` fraction of proposals then sees ``l <= 0``, i.e. an
acceptance probability of at least one half.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np


def empirical_quantile(values, gamma: float) -> float:
    """Lower inverse-CDF quantile: the ``ceil(gamma * N)``-th order statistic."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    n = values.size
    # round away float noise such as 0.9 * 10 = 9.000000000000002
    k = max(1, math.ceil(round(gamma * n, 9)))
    return float(values[k - 1])


def _check(gamma, N):
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if N < 1:
        raise ValueError("N must be at least 1")


def estimate_threshold(q, model, x, gamma: float, N: int, rng) -> float:
    _check(gamma, N)
    z = q.sample(x, N, rng)
    return empirical_quantile(q.log_prob(x, z) - model.log_joint(x, z), gamma)


@dataclass(frozen=True)
class ThresholdTable:
    thresholds: np.ndarray
    gamma: float = 0.9
    refresh_every: int = 1
    est_samples: int = 100

    def __post_init__(self):
        _check(self.gamma, self.est_samples)
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be at least 1")
        t = np.array(self.thresholds, dtype=np.float64)
        if np.any(np.isnan(t)) or np.any(t == -np.inf):
            raise ValueError("thresholds must be finite or +inf")
        t.flags.writeable = False
        object.__setattr__(self, "thresholds", t)

    @classmethod
    def initial(cls, size, gamma=0.9, refresh_every=1, est_samples=100):
        """Every threshold starts at +inf, i.e. no rejection."""
        return cls(np.full(size, np.inf), gamma, refresh_every, est_samples)

    def __len__(self):
        return self.thresholds.size

    def __getitem__(self, index) -> float:
        return float(self.thresholds[index])

    def lookup_or_estimate(self, index, q, model, x, rng) -> float:
        """Stored threshold, or a fresh estimate for an unseen datapoint."""
        if index is not None and 0 <= index < len(self):
            return self[index]
        return estimate_threshold(q, model, x, self.gamma, self.est_samples, rng)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "T"])
            for i, t in enumerate(self.thresholds):
                w.writerow([i, repr(float(t))])

    @classmethod
    def load_csv(cls, path, gamma=0.9, refresh_every=1, est_samples=100):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        t = np.full(len(rows), np.inf)
        for row in rows:
            t[int(row["index"])] = float(row["T"])
        return cls(t, gamma, refresh_every, est_samples)


def refresh_table(table: ThresholdTable, q, model, dataset, rng) -> ThresholdTable:
    """Re-estimate every datapoint's threshold under the current parameters."""
    new = np.array([
        estimate_threshold(q, model, x, table.gamma, table.est_samples, rng) for x in dataset
    ])
    return replace(table, thresholds=new)
