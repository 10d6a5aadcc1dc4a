"""Summary statistics and confidence intervals for replica outputs."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps

CONFIDENCE = 0.95


@dataclass
class Proportion:
    """``k`` successes out of ``trials`` with a two-sided interval.

    With ``k = 0`` the upper end is the one-sided bound ``1 - alpha^(1/R)``
    and ``one_sided`` is set.
    """

    k: int
    trials: int
    p: float
    ci_low: float
    ci_high: float
    one_sided: bool = False

    @classmethod
    def of(cls, k: int, trials: int, confidence: float = CONFIDENCE) -> "Proportion":
        if trials <= 0:
            raise ValueError("no trials")
        if k == 0:
            return cls(0, trials, 0.0, 0.0, 1.0 - (1.0 - confidence) ** (1.0 / trials), True)
        ci = sps.binomtest(k, trials).proportion_ci(confidence_level=confidence, method="wilson")
        return cls(k, trials, k / trials, float(ci.low), float(ci.high))

    def exponent(self, n: int) -> float | None:
        """Fitted exponent ``-log_n p``; ``None`` when nothing was observed."""
        return None if self.k == 0 else -math.log(self.p) / math.log(n)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SummaryStats:
    """Distribution summary of one measured quantity."""

    experiment_id: str
    count: int
    truncated: int
    mean: float | None
    median: float | None
    stderr: float | None
    quantiles: dict[str, float] = field(default_factory=dict)
    probabilities: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def of(cls, experiment_id: str, values: Sequence[float], truncated: int = 0) -> "SummaryStats":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls(experiment_id, 0, truncated, None, None, None)
        q = {f"q{int(100 * p):02d}": float(np.quantile(v, p)) for p in (0.05, 0.25, 0.75, 0.95)}
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
        return cls(experiment_id, int(v.size), truncated, float(v.mean()), float(np.median(v)), se, q)

    def add_probability(self, name: str, prop: Proportion) -> None:
        self.probabilities[name] = prop.as_dict()

    def as_dict(self) -> dict:
        return asdict(self)


def ks_exponential(values: Sequence[float]) -> float:
    """KS distance between ``values`` and the Exp(1) law."""
    return float(sps.kstest(np.asarray(values, dtype=float), "expon").statistic)


def chi2_homogeneity(a: Sequence, b: Sequence) -> float:
    """p-value of the chi-square test that two samples of labels share a law."""
    labels = sorted(set(a) | set(b))
    idx = {x: i for i, x in enumerate(labels)}
    table = np.zeros((2, len(labels)), dtype=np.int64)
    for x in a:
        table[0, idx[x]] += 1
    for x in b:
        table[1, idx[x]] += 1
    if len(labels) < 2:
        return 1.0
    return float(sps.chi2_contingency(table, correction=False).pvalue)


def chi2_goodness(observed: Sequence[int], probs: Sequence[float]) -> float:
    """p-value of a chi-square goodness-of-fit test against ``probs``."""
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(probs, dtype=float) * obs.sum()
    keep = exp > 0
    return float(sps.chisquare(obs[keep], exp[keep]).pvalue)


def nonincreasing(xs: Sequence[float]) -> bool:
    return all(a >= b for a, b in zip(xs, xs[1:]))


def nondecreasing(xs: Sequence[float]) -> bool:
    return all(a <= b for a, b in zip(xs, xs[1:]))
