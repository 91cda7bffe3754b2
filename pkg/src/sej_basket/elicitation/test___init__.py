from math import sqrt
from unittest import TestCase, main

from numpy import diff, linspace, percentile, unique

from .._util import new_stream
from . import (
    DEFAULT_OVERSHOOT,
    DomainError,
    ElicitedQuantiles,
    IntrinsicRange,
    PiecewiseDistribution,
    QuantileOrderError,
    RangeError,
    fit_distribution,
)

_VEGETABLES_A = ElicitedQuantiles(q05=-8, q50=16, q95=51)


def _fit(q: ElicitedQuantiles, overshoot: float = DEFAULT_OVERSHOOT):
    return fit_distribution(q, IntrinsicRange.pooled(q.values, overshoot))


class QuantilesTestCase(TestCase):
    __slots__ = ()

    def test_order(self) -> None:
        for values in (
            (1, 1, 2),
            (1, 2, 2),
            (3, 2, 1),
            (0, 0.5e-9, 1),
            (float("nan"), 0, 1),
            (0, 1, float("inf")),
        ):
            with self.assertRaises(QuantileOrderError, msg=values):
                ElicitedQuantiles(q05=values[0], q50=values[1], q95=values[2])
        self.assertEqual(
            (9.999999, 10.0, 10.000001),
            ElicitedQuantiles(q05=9.999999, q50=10.0, q95=10.000001).values,
        )

    def test_pooled_range(self) -> None:
        r = IntrinsicRange.pooled(_VEGETABLES_A.values)
        self.assertAlmostEqual(-13.9, r.lo, places=12)
        self.assertAlmostEqual(56.9, r.hi, places=12)
        r = IntrinsicRange.pooled((*_VEGETABLES_A.values, 70.0), 0.0)
        self.assertEqual((-8, 70), (r.lo, r.hi))
        for lo, hi in ((1, 1), (2, 1), (0, float("inf"))):
            with self.assertRaises(RangeError):
                IntrinsicRange(lo=lo, hi=hi)
        with self.assertRaises(RangeError):
            IntrinsicRange.pooled(())


class FitTestCase(TestCase):
    __slots__ = ()

    def test_knots(self) -> None:
        d = _fit(_VEGETABLES_A)
        for x, p in {-8: 0.05, 16: 0.5, 51: 0.95}.items():
            self.assertEqual(p, d.cdf(x))
        self.assertEqual(0, d.cdf(d.support[0]))
        self.assertEqual(1, d.cdf(d.support[1]))
        for actual, expected in zip(d.masses, (0.05, 0.45, 0.45, 0.05), strict=True):
            self.assertAlmostEqual(expected, actual, delta=1e-15)

    def test_range_errors(self) -> None:
        for lo, hi in ((-7, 60), (-20, 51), (-20, 50)):
            with self.assertRaises(RangeError, msg=(lo, hi)):
                fit_distribution(_VEGETABLES_A, IntrinsicRange(lo=lo, hi=hi))

    def test_integrated_density(self) -> None:
        d = _fit(_VEGETABLES_A)
        lo, hi = d.support
        for x in linspace(lo, hi, 12)[1:-1]:
            breaks = unique((*(v for v in d.values if v < x), x))
            mids = (breaks[:-1] + breaks[1:]) / 2
            integral = float((d.density(mids) * diff(breaks)).sum())
            self.assertAlmostEqual(integral, d.cdf(x), delta=1e-10)

    def test_affine(self) -> None:
        d = _fit(_VEGETABLES_A)
        r = IntrinsicRange.pooled(_VEGETABLES_A.values)
        for a, b in ((2, 0), (0.5, 3), (10, -100)):
            mapped = fit_distribution(
                ElicitedQuantiles(
                    q05=a * _VEGETABLES_A.q05 + b,
                    q50=a * _VEGETABLES_A.q50 + b,
                    q95=a * _VEGETABLES_A.q95 + b,
                ),
                IntrinsicRange(lo=a * r.lo + b, hi=a * r.hi + b),
            )
            for x in linspace(r.lo - 1, r.hi + 1, 37):
                self.assertAlmostEqual(d.cdf(x), mapped.cdf(a * x + b), delta=1e-12)


class DistributionTestCase(TestCase):
    __slots__ = ()

    def test_cdf(self) -> None:
        d = _fit(_VEGETABLES_A)
        self.assertAlmostEqual(0.275, d.cdf((-8 + 16) / 2), delta=1e-15)
        for x, p in {-1000: 0, 1000: 1, float("-inf"): 0, float("inf"): 1}.items():
            self.assertEqual(p, d.cdf(x))
        grid = d.cdf(linspace(-30, 80, 1001))
        self.assertTrue((diff(grid) >= 0).all())

    def test_quantile(self) -> None:
        d = _fit(_VEGETABLES_A)
        for p, x in {0.05: -8, 0.5: 16, 0.95: 51}.items():
            self.assertEqual(x, d.quantile(p))
        self.assertEqual(d.support, (d.quantile(0), d.quantile(1)))
        for p in (-0.1, 1.1, float("nan")):
            with self.assertRaises(DomainError, msg=p):
                d.quantile(p)
        ps = linspace(0, 1, 1001)[1:-1]
        self.assertLess(abs(d.cdf(d.quantile(ps)) - ps).max(), 1e-12)
        lo, hi = d.support
        xs = linspace(lo, hi, 102)[1:-1]
        self.assertLess(abs(d.quantile(d.cdf(xs)) - xs).max(), 1e-10)

    def test_mean(self) -> None:
        d = fit_distribution(
            ElicitedQuantiles(q05=-1, q50=0, q95=1), IntrinsicRange(lo=-1.2, hi=1.2)
        )
        self.assertAlmostEqual(0, d.mean, delta=1e-15)
        # 10% overshoot gives 0.45 q50 + 0.275 (q05 + q95)
        self.assertAlmostEqual(19.025, _fit(_VEGETABLES_A).mean, delta=1e-12)

    def test_sample(self) -> None:
        d = _fit(_VEGETABLES_A)
        samples = d.sample(new_stream(20201231, "sample"), 10**6)
        for actual, expected in zip(
            percentile(samples, (5, 50, 95)), _VEGETABLES_A.values, strict=True
        ):
            self.assertAlmostEqual(expected, actual, delta=0.5)
        standard_error = sqrt(d.variance / samples.size)
        self.assertLess(abs(samples.mean() - d.mean), 3 * standard_error)
        self.assertListEqual(
            samples[:100].tolist(),
            d.sample(new_stream(20201231, "sample"), 10**6)[:100].tolist(),
        )

    def test_sample_narrow(self) -> None:
        d = _fit(ElicitedQuantiles(q05=9.999999, q50=10.0, q95=10.000001))
        samples = d.sample(new_stream(1, "narrow"), 10**5)
        lo, hi = d.support
        self.assertTrue(((samples >= lo) & (samples <= hi)).all())

    def test_conditional_quantile(self) -> None:
        d = _fit(_VEGETABLES_A)
        us = linspace(0, 1, 11)[:-1]
        self.assertListEqual(
            d.quantile(us).tolist(), d.conditional_quantile(us, 0).tolist()
        )
        self.assertTrue((d.conditional_quantile(us, 0.84) >= d.quantile(0.84)).all())
        for floor in (-0.1, 1, 1.5):
            with self.assertRaises(DomainError, msg=floor):
                d.conditional_quantile(us, floor)

    def test_invalid(self) -> None:
        for values, probabilities in (
            ((0,), (0,)),
            ((0, 1), (0, 0.5, 1)),
            ((0, 0, 1), (0, 0.5, 1)),
            ((0, 1, 2), (0, 0.6, 0.5)),
            ((0, 1, 2), (0.1, 0.5, 1)),
            ((0, 1, 2), (0, 0, 1)),
            ((0, 1, 2), (0, 1, 1)),
        ):
            with self.assertRaises(ValueError, msg=(values, probabilities)):
                PiecewiseDistribution(values=values, probabilities=probabilities)
        flat = PiecewiseDistribution(
            values=(0, 1, 2, 3), probabilities=(0, 0.5, 0.5, 1)
        )
        self.assertEqual(0.5, flat.cdf(1.5))
        self.assertEqual(1, flat.quantile(0.5))


if __name__ == "__main__":
    main()
