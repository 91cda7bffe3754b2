from decimal import Decimal
from math import sqrt
from unittest import TestCase, main

from numpy import asarray, concatenate
from scipy.stats import ks_2samp  # type: ignore

from ..elicitation import (
    DomainError,
    ElicitedQuantiles,
    IntrinsicRange,
    PiecewiseDistribution,
    fit_distribution,
)
from . import (
    BasketDefinition,
    CategoryMismatchError,
    ScenarioSet,
    UnknownCategoryError,
    mix_scenarios,
    project_baseline,
)
from .monte_carlo import (
    CHUNK_SIZE,
    SamplingOptions,
    Summary,
    conditional_tail,
    copula_correlation,
    pinned_whatif,
    propagate_basket,
    simulate_basket,
    simulate_joint,
)

# published category medians and 90% intervals, scenarios A, B and C
_TABLE = {
    "Soft drinks": ((-1, 9, 37), (-2, 9, 30), (-1, 9, 30)),
    "Coffee, tea & cocoa": ((-1, 6, 34), (-2, 5, 30), (0, 6, 31)),
    "Sugar, jam": ((-7, 6, 25), (-8, 5, 24), (-5, 5, 20)),
    "Vegetables": ((-8, 16, 51), (-4, 10, 30), (-5, 5, 16)),
    "Fruit": ((-10, 24, 61), (-7, 14, 40), (-8, 5, 24)),
    "Oil & fats": ((-8, 20, 47), (-10, 20, 38), (-11, 5, 27)),
    "Milk, cheese & eggs": ((-6, 17, 50), (-8, 10, 21), (-5, 5, 19)),
    "Fish": ((-5, 19, 44), (-4, 18, 31), (-4, 10, 29)),
    "Meat": ((0, 20, 57), (-1, 18, 30), (-1, 17, 40)),
    "Bread & Cereals": ((0, 19, 40), (-4, 16, 34), (-5, 5, 19)),
}
# approximate CPI food expenditure shares
_CPI_WEIGHTS = {
    "Bread & Cereals": 0.16,
    "Meat": 0.21,
    "Fish": 0.04,
    "Milk, cheese & eggs": 0.12,
    "Oil & fats": 0.02,
    "Fruit": 0.10,
    "Vegetables": 0.15,
    "Sugar, jam": 0.08,
    "Coffee, tea & cocoa": 0.03,
    "Soft drinks": 0.09,
}
_PUBLISHED_MEANS = {"A": 18.7, "B": 13.6, "C": 10.0}
# published basket medians and 90% intervals
_PUBLISHED_INTERVALS = {
    "A": (17.9, 5.2, 35.1),
    "B": (13.2, 2.6, 26.4),
    "C": (9.3, 0.8, 21.9),
}
# exchangeable rank correlations bringing the intervals within 2 points
_FITTED_RANK_CORRELATIONS = {"A": 0.2, "B": 0.3, "C": 0.3}
_BASKET = BasketDefinition(
    name="cpi",
    weights=_CPI_WEIGHTS,
    baseline_cost=Decimal("59.35"),
    baseline_date="2020-12",
)
_BASELINE = project_baseline(59.35)
_SAMPLES = 200_000


def _scenario(scenario: str) -> dict[str, PiecewiseDistribution]:
    idx = "ABC".index(scenario)
    ret = dict[str, PiecewiseDistribution]()
    for category, rows in _TABLE.items():
        q05, q50, q95 = rows[idx]
        q = ElicitedQuantiles(q05=q05, q50=q50, q95=q95)
        ret[category] = fit_distribution(q, IntrinsicRange.pooled(q.values))
    return ret


def _options(seed: int = 20201231, samples: int = _SAMPLES, **kwargs: object):
    return SamplingOptions(seed=seed, samples=samples, **kwargs)  # type: ignore


def _moments(
    distributions: dict[str, PiecewiseDistribution],
    weights: dict[str, float] = _CPI_WEIGHTS,
) -> tuple[float, float]:
    mean = sum(w * distributions[c].mean for c, w in weights.items())
    variance = sum(w * w * distributions[c].variance for c, w in weights.items())
    return mean, sqrt(variance)


def _tail_mean(d: PiecewiseDistribution, floor: float) -> float:
    ps = sorted({floor, *(p for p in d.probabilities if p > floor)})
    qs = d.quantile(ps)
    area = sum(
        (qs[idx] + qs[idx + 1]) / 2 * (ps[idx + 1] - ps[idx])
        for idx in range(len(ps) - 1)
    )
    return area / (1 - floor)


class SummaryTestCase(TestCase):
    __slots__ = ()

    def test_of(self) -> None:
        summary = Summary.of(asarray([5.0, 1, 4, 2, 3]))
        self.assertEqual(3, summary.mean)
        self.assertAlmostEqual(sqrt(2.5), summary.sd, delta=1e-15)
        self.assertEqual(3, summary.median)
        self.assertAlmostEqual(1.2, summary.p05, delta=1e-12)
        self.assertAlmostEqual(4.8, summary.p95, delta=1e-12)

    def test_single(self) -> None:
        self.assertEqual(
            Summary(mean=7, sd=0, median=7, p05=7, p95=7), Summary.of(asarray([7.0]))
        )
        with self.assertRaises(DomainError):
            Summary.of(asarray([]))

    def test_options(self) -> None:
        for kwargs in (
            {"seed": -1},
            {"seed": 2**64},
            {"seed": 1, "samples": 0},
            {"seed": 1, "workers": 0},
        ):
            with self.assertRaises(DomainError, msg=kwargs):
                SamplingOptions(**kwargs)  # type: ignore


class PropagateTestCase(TestCase):
    __slots__ = ()

    def test_scenarios(self) -> None:
        medians = list[float]()
        for scenario in "ABC":
            distributions = _scenario(scenario)
            result = propagate_basket(_BASKET, distributions, _BASELINE, _options())
            mean, sd = _moments(distributions)
            self.assertEqual(_SAMPLES, result.samples)
            self.assertAlmostEqual(
                _PUBLISHED_MEANS[scenario], result.percent.mean, delta=1.0
            )
            self.assertLess(
                abs(result.percent.mean - mean), 4 * sd / sqrt(_SAMPLES), scenario
            )
            self.assertAlmostEqual(sd, result.percent.sd, delta=0.05)
            for summary in (result.percent, result.change, result.total):
                self.assertLessEqual(summary.p05, summary.median)
                self.assertLessEqual(summary.median, summary.p95)
            medians.append(result.percent.median)
        self.assertGreater(medians[0], medians[1])
        self.assertGreater(medians[1], medians[2])

    def test_published_intervals(self) -> None:
        for scenario, (median, p05, p95) in _PUBLISHED_INTERVALS.items():
            distributions = _scenario(scenario)
            result = propagate_basket(
                _BASKET, distributions, _BASELINE, _options(samples=10**6)
            )
            self.assertAlmostEqual(median, result.percent.median, delta=1.5, msg=scenario)
            # independent categories give too narrow an interval
            self.assertGreater(result.percent.p05, p05 + 2, scenario)
            self.assertLess(result.percent.p95, p95 - 2, scenario)

            correlated = propagate_basket(
                _BASKET,
                distributions,
                _BASELINE,
                _options(
                    samples=10**6,
                    rank_correlation=_FITTED_RANK_CORRELATIONS[scenario],
                ),
            )
            self.assertAlmostEqual(p05, correlated.percent.p05, delta=2.0, msg=scenario)
            self.assertAlmostEqual(p95, correlated.percent.p95, delta=2.0, msg=scenario)

    def test_currency(self) -> None:
        distributions = _scenario("C")
        result = propagate_basket(_BASKET, distributions, _BASELINE, _options())
        for field in ("mean", "median", "p05", "p95", "sd"):
            percent = getattr(result.percent, field)
            self.assertAlmostEqual(
                percent * 59.35 / 100, getattr(result.change, field), delta=1e-9
            )
        self.assertAlmostEqual(
            59.35 + result.change.median, result.total.median, delta=1e-9
        )
        doubled = propagate_basket(
            _BASKET, distributions, project_baseline(2 * 59.35), _options()
        )
        self.assertEqual(result.percent, doubled.percent)
        for field in ("mean", "sd", "median", "p05", "p95"):
            self.assertEqual(
                2 * getattr(result.change, field), getattr(doubled.change, field)
            )
            self.assertEqual(
                2 * getattr(result.total, field), getattr(doubled.total, field)
            )

    def test_constant(self) -> None:
        narrow = {
            category: fit_distribution(
                ElicitedQuantiles(q05=9.999999, q50=10, q95=10.000001),
                IntrinsicRange(lo=9.9999988, hi=10.0000012),
            )
            for category in _CPI_WEIGHTS
        }
        result = propagate_basket(_BASKET, narrow, _BASELINE, _options(samples=1000))
        for value in (result.percent.p05, result.percent.median, result.percent.p95):
            self.assertAlmostEqual(10, value, delta=1e-5)
        self.assertAlmostEqual(5.935, result.change.median, delta=1e-5)

    def test_single_category(self) -> None:
        basket = BasketDefinition(
            name="vegetables",
            weights={"Vegetables": 1},
            baseline_cost=Decimal("10"),
            baseline_date="2020-12",
        )
        result = propagate_basket(basket, _scenario("A"), _BASELINE, _options())
        self.assertAlmostEqual(-8, result.percent.p05, delta=0.5)
        self.assertAlmostEqual(16, result.percent.median, delta=0.5)
        self.assertAlmostEqual(51, result.percent.p95, delta=0.5)

    def test_bounds(self) -> None:
        distributions = _scenario("A")
        samples = simulate_basket(_BASKET, distributions, _BASELINE, _options())
        lo = sum(w * distributions[c].support[0] for c, w in _CPI_WEIGHTS.items())
        hi = sum(w * distributions[c].support[1] for c, w in _CPI_WEIGHTS.items())
        self.assertGreaterEqual(samples.percent.min(), lo - 1e-9)
        self.assertLessEqual(samples.percent.max(), hi + 1e-9)

    def test_reorder(self) -> None:
        distributions = _scenario("B")
        reordered = BasketDefinition(
            name="cpi",
            weights=dict(reversed(_CPI_WEIGHTS.items())),
            baseline_cost=Decimal("59.35"),
            baseline_date="2020-12",
        )
        self.assertEqual(
            propagate_basket(_BASKET, distributions, _BASELINE, _options(samples=5000)),
            propagate_basket(
                reordered,
                dict(reversed(distributions.items())),
                _BASELINE,
                _options(samples=5000),
            ),
        )

    def test_determinism(self) -> None:
        distributions = _scenario("A")
        options = _options(samples=CHUNK_SIZE + 3)
        self.assertEqual(
            propagate_basket(_BASKET, distributions, _BASELINE, options),
            propagate_basket(_BASKET, distributions, _BASELINE, options),
        )
        single = propagate_basket(_BASKET, distributions, _BASELINE, _options(samples=1))
        self.assertEqual(1, single.samples)
        self.assertEqual(0, single.percent.sd)
        self.assertEqual(single.percent.p05, single.percent.p95)

    def test_seed_stability(self) -> None:
        distributions = _scenario("A")
        first, second = (
            propagate_basket(
                _BASKET, distributions, _BASELINE, _options(seed=seed, samples=10**6)
            )
            for seed in (1, 2)
        )
        self.assertLess(abs(first.percent.median - second.percent.median), 0.2)

    def test_missing_category(self) -> None:
        distributions = _scenario("A")
        del distributions["Fish"]
        with self.assertRaises(CategoryMismatchError):
            propagate_basket(_BASKET, distributions, _BASELINE, _options(samples=10))

    def test_workers_mp(self) -> None:
        distributions = _scenario("B")
        samples = 3 * CHUNK_SIZE + 7
        self.assertEqual(
            propagate_basket(
                _BASKET, distributions, _BASELINE, _options(samples=samples)
            ),
            propagate_basket(
                _BASKET,
                distributions,
                _BASELINE,
                _options(samples=samples, workers=3),
            ),
        )


class MixtureTestCase(TestCase):
    __slots__ = ()

    def test_bracketing(self) -> None:
        scenarios = ScenarioSet.equal({s: _scenario(s) for s in "ABC"})
        mixed = {c: mix_scenarios(scenarios, c) for c in scenarios.categories}
        result = propagate_basket(_BASKET, mixed, _BASELINE, _options())
        self.assertTrue(9.3 < result.percent.median < 17.9, result.percent.median)
        expected = sum(_moments(_scenario(s))[0] for s in "ABC") / 3
        self.assertAlmostEqual(expected, result.percent.mean, delta=0.1)

    def test_joint(self) -> None:
        distributions = {s: _scenario(s) for s in "ABC"}
        weights = {"A": 0.5, "B": 0.3, "C": 0.2}
        samples = 100_000
        joint = simulate_joint(
            _BASKET,
            ScenarioSet(distributions=distributions, weights=weights),
            _BASELINE,
            _options(seed=5, samples=samples),
        )
        pooled = concatenate(
            [
                simulate_basket(
                    _BASKET,
                    distributions[s],
                    _BASELINE,
                    _options(seed=seed, samples=samples),
                ).percent[: round(weights[s] * samples)]
                for seed, s in zip((6, 7, 8), "ABC")
            ]
        )
        self.assertEqual(samples, pooled.size)
        self.assertGreater(ks_2samp(joint.percent, pooled).pvalue, 0.001)


class WhatIfTestCase(TestCase):
    __slots__ = ()

    def test_tail(self) -> None:
        distributions = _scenario("B")
        unconditional = propagate_basket(
            _BASKET, distributions, _BASELINE, _options()
        )
        self.assertEqual(
            unconditional,
            conditional_tail(_BASKET, distributions, _BASELINE, 0, _options()),
        )
        for floor in (0.5, 0.84):
            result = conditional_tail(
                _BASKET, distributions, _BASELINE, floor, _options()
            )
            self.assertGreaterEqual(result.percent.mean, unconditional.percent.mean)
            expected = sum(
                w * _tail_mean(distributions[c], floor) for c, w in _CPI_WEIGHTS.items()
            )
            self.assertLess(
                abs(result.percent.mean - expected),
                4 * result.percent.sd / sqrt(_SAMPLES),
                floor,
            )
        for floor in (-0.1, 1):
            with self.assertRaises(DomainError, msg=floor):
                conditional_tail(_BASKET, distributions, _BASELINE, floor, _options())

    def test_pin_all(self) -> None:
        distributions = _scenario("A")
        result = pinned_whatif(
            _BASKET,
            distributions,
            _BASELINE,
            {category: 0.5 for category in _CPI_WEIGHTS},
            _options(samples=1000),
        )
        expected = 0.0
        for category in sorted(_CPI_WEIGHTS):
            expected += _CPI_WEIGHTS[category] * distributions[category].quantiles.q50
        self.assertEqual(expected, result.percent.median)
        self.assertEqual(expected, result.percent.p05)
        self.assertEqual(expected, result.percent.p95)
        self.assertAlmostEqual(expected, result.percent.mean, delta=1e-12)
        self.assertAlmostEqual(0, result.percent.sd, delta=1e-12)
        self.assertAlmostEqual(expected * 59.35 / 100, result.change.median, delta=1e-12)

    def test_pin_tails(self) -> None:
        distributions = _scenario("A")
        pins = {"Fruit": 0.95, "Vegetables": 0.95}
        result = pinned_whatif(_BASKET, distributions, _BASELINE, pins, _options())
        unpinned = {c: w for c, w in _CPI_WEIGHTS.items() if c not in pins}
        mean, sd = _moments(distributions, unpinned)
        mean += 0.10 * 61 + 0.15 * 51
        self.assertLess(abs(result.percent.mean - mean), 4 * sd / sqrt(_SAMPLES))
        self.assertLess(result.percent.sd, sd + 0.05)

    def test_pin_median_is_point_mass(self) -> None:
        distributions = _scenario("A")
        pinned = pinned_whatif(
            _BASKET, distributions, _BASELINE, {"Meat": 0.5}, _options()
        )
        replaced = dict(distributions)
        replaced["Meat"] = fit_distribution(
            ElicitedQuantiles(q05=20 - 1e-6, q50=20, q95=20 + 1e-6),
            IntrinsicRange(lo=20 - 2e-6, hi=20 + 2e-6),
        )
        point = propagate_basket(_BASKET, replaced, _BASELINE, _options())
        self.assertLess(
            abs(pinned.percent.mean - point.percent.mean),
            4 * point.percent.sd / sqrt(_SAMPLES),
        )

    def test_pin_errors(self) -> None:
        distributions = _scenario("A")
        with self.assertRaises(UnknownCategoryError):
            pinned_whatif(
                _BASKET, distributions, _BASELINE, {"Caviar": 0.5}, _options(samples=10)
            )
        for level in (-0.1, 1.5):
            with self.assertRaises(DomainError, msg=level):
                pinned_whatif(
                    _BASKET, distributions, _BASELINE, {"Fish": level}, _options(samples=10)
                )


class CopulaTestCase(TestCase):
    __slots__ = ()

    def test_dependence(self) -> None:
        distributions = _scenario("A")
        independent = propagate_basket(_BASKET, distributions, _BASELINE, _options())
        self.assertEqual(
            independent,
            propagate_basket(
                _BASKET, distributions, _BASELINE, _options(rank_correlation=0.0)
            ),
        )
        correlated = propagate_basket(
            _BASKET, distributions, _BASELINE, _options(rank_correlation=0.5)
        )
        self.assertGreater(correlated.percent.sd, 1.5 * independent.percent.sd)
        self.assertAlmostEqual(
            independent.percent.mean, correlated.percent.mean, delta=0.2
        )

    def test_marginals(self) -> None:
        # a zero-weight category keeps the copula active without affecting the basket
        basket = BasketDefinition(
            name="fruit",
            weights={"Fruit": 1, "Vegetables": 0},
            baseline_cost=Decimal("10"),
            baseline_date="2020-12",
        )
        result = propagate_basket(
            basket, _scenario("A"), _BASELINE, _options(rank_correlation=0.6)
        )
        for expected, actual in (
            (-10, result.percent.p05),
            (24, result.percent.median),
            (61, result.percent.p95),
        ):
            self.assertAlmostEqual(expected, actual, delta=0.5)

    def test_invalid(self) -> None:
        self.assertIsNone(copula_correlation(0, 10))
        self.assertIsNone(copula_correlation(0.5, 1))
        self.assertIsNone(copula_correlation(((1, 0), (0, 1)), 2))
        for rank_correlation, size in (
            (-0.5, 10),
            (1, 3),
            (float("nan"), 3),
            (((1, 0.5), (0.5, 1)), 3),
            (((1, 0.5), (0.4, 1)), 2),
            (((2, 0), (0, 1)), 2),
        ):
            with self.assertRaises(DomainError, msg=(rank_correlation, size)):
                copula_correlation(rank_correlation, size)
        factor = copula_correlation(0.5, 2)
        assert factor is not None
        self.assertAlmostEqual(
            2 * 0.2588190451025208, (factor @ factor.T)[0, 1], delta=1e-12
        )


if __name__ == "__main__":
    main()
