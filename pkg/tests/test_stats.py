import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from torcover.stats import (
    Proportion,
    SummaryStats,
    chi2_goodness,
    chi2_homogeneity,
    ks_exponential,
    nondecreasing,
    nonincreasing,
)


class TestProportion:
    def test_wilson_contains_estimate(self):
        p = Proportion.of(30, 100)
        assert p.ci_low < 0.3 < p.ci_high
        # frozen Wilson 95% interval for 30/100
        assert p.ci_low == pytest.approx(0.2189, abs=1e-4)
        assert p.ci_high == pytest.approx(0.3958, abs=1e-4)

    def test_zero_successes_one_sided(self):
        p = Proportion.of(0, 1000)
        assert p.one_sided and p.p == 0.0
        assert p.ci_high == pytest.approx(1 - 0.05 ** (1 / 1000))
        assert p.exponent(64) is None

    def test_exponent(self):
        p = Proportion.of(1, 64)
        assert p.exponent(64) == pytest.approx(1.0)

    def test_no_trials(self):
        with pytest.raises(ValueError):
            Proportion.of(0, 0)

    @given(st.integers(1, 500).flatmap(lambda t: st.tuples(st.integers(0, t), st.just(t))))
    def test_interval_is_probability(self, kt):
        p = Proportion.of(*kt)
        assert 0 <= p.ci_low <= p.p <= p.ci_high <= 1


class TestSummary:
    def test_basic(self):
        s = SummaryStats.of("x", [1, 2, 3, 4, 5], truncated=1)
        assert s.mean == 3 and s.median == 3 and s.truncated == 1
        assert s.stderr == pytest.approx(math.sqrt(2.5 / 5))
        assert set(s.quantiles) == {"q05", "q25", "q75", "q95"}

    def test_empty(self):
        s = SummaryStats.of("x", [])
        assert s.count == 0 and s.mean is None

    def test_probability_attached(self):
        s = SummaryStats.of("x", [1.0])
        s.add_probability("tail", Proportion.of(1, 2))
        assert s.as_dict()["probabilities"]["tail"]["p"] == 0.5


class TestTests:
    def test_ks_exponential(self, rng):
        assert ks_exponential(rng.exponential(size=20_000)) < 0.015
        assert ks_exponential(rng.uniform(size=20_000)) > 0.1

    def test_homogeneity(self, rng):
        a = rng.integers(4, size=5000).tolist()
        b = rng.integers(4, size=5000).tolist()
        assert chi2_homogeneity(a, b) > 0.001
        assert chi2_homogeneity([0] * 100 + [1] * 100, [0] * 190 + [1] * 10) < 1e-6
        assert chi2_homogeneity([1, 1], [1]) == 1.0

    def test_goodness(self):
        assert chi2_goodness([250, 250, 500], [0.25, 0.25, 0.5]) == pytest.approx(1.0)
        assert chi2_goodness([500, 0, 500], [0.25, 0.25, 0.5]) < 1e-6

    @pytest.mark.parametrize("xs,inc,dec", [([1, 2, 2], False, True), ([3, 1, 1], True, False), ([], True, True)])
    def test_monotone(self, xs, inc, dec):
        assert nonincreasing(xs) is inc
        assert nondecreasing(xs) is dec

