"""Brier score, equal-width reliability bins and expected calibration error."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

DEFAULT_BINS = 10


def brier(scored):
    y = scored.require_labels()
    return float(np.mean((scored.scores - y) ** 2))


@dataclass(frozen=True)
class ReliabilityBins:
    """Per-bin statistics; ``mean_pred``/``obs_freq`` are ``None`` for empty bins."""

    lower: tuple
    upper: tuple
    counts: tuple
    mean_pred: tuple
    obs_freq: tuple

    @property
    def n_bins(self):
        return len(self.counts)

    @property
    def n(self):
        return sum(self.counts)

    def rows(self):
        return list(zip(self.lower, self.upper, self.counts, self.mean_pred, self.obs_freq))

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "mean_pred", "obs_freq"])
        for lo, hi, c, mp, of in self.rows():
            w.writerow([repr(lo), repr(hi), c, "" if mp is None else repr(mp), "" if of is None else repr(of)])


def bin_index(probs, n_bins):
    """Bin of each probability: ``[k/B, (k+1)/B)``, the last bin closed at 1."""
    return np.minimum((np.asarray(probs) * n_bins).astype(np.int64), n_bins - 1)


def reliability_bins(scored, n_bins=DEFAULT_BINS):
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    y = scored.require_labels()
    p = scored.scores
    idx = bin_index(p, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    sum_p = np.bincount(idx, weights=p, minlength=n_bins)
    sum_y = np.bincount(idx, weights=y.astype(np.float64), minlength=n_bins)
    mean_pred = tuple(float(s / c) if c else None for s, c in zip(sum_p, counts))
    obs = tuple(float(s / c) if c else None for s, c in zip(sum_y, counts))
    lower = tuple(k / n_bins for k in range(n_bins))
    upper = tuple((k + 1) / n_bins for k in range(n_bins))
    return ReliabilityBins(lower, upper, tuple(int(c) for c in counts), mean_pred, obs)


def ece(bins):
    n = bins.n
    total = 0.0
    for c, conf, acc in zip(bins.counts, bins.mean_pred, bins.obs_freq):
        if c:
            total += c / n * abs(acc - conf)
    return total
