from dataclasses import dataclass
from math import isfinite
from typing import Iterable, Sequence, overload

from numpy import (
    all as np_all,
    asarray,
    clip,
    diff,
    divide,
    float64,
    ndim,
    searchsorted,
    zeros_like,
)
from numpy.random import Generator
from numpy.typing import ArrayLike, NDArray

from .._util import ValidationFailure

QUANTILE_LEVELS = (0.05, 0.50, 0.95)
"""
Cumulative probabilities of the elicited quantiles.
"""
PIECE_MASSES = (0.05, 0.45, 0.45, 0.05)
"""
Probability mass between consecutive knots of a fitted distribution.
"""
MIN_SEPARATION = 1e-9
"""
Minimum separation between consecutive elicited quantiles.
"""
DEFAULT_OVERSHOOT = 0.10
"""
Default fraction of the pooled spread added on both sides of an intrinsic range.
"""


class QuantileOrderError(ValidationFailure):
    """
    Elicited quantiles are not strictly increasing.
    """

    __slots__ = ()


class RangeError(ValidationFailure):
    """
    Values fall outside, or on the boundary of, an intrinsic range, or the range is empty.
    """

    __slots__ = ()


class DomainError(ValidationFailure):
    """
    An argument lies outside the domain of an operation.
    """

    __slots__ = ()


@dataclass(frozen=True, kw_only=True, slots=True)
class ElicitedQuantiles:
    """
    One expert's 5th, 50th and 95th percentile judgement for one item.

    Values are percent changes and may be negative.
    """

    q05: float
    """
    5th percentile.
    """
    q50: float
    """
    Median.
    """
    q95: float
    """
    95th percentile.
    """

    def __post_init__(self) -> None:
        if not all(map(isfinite, self.values)):
            raise QuantileOrderError(f"Quantiles must be finite: {self.values}")
        if not (
            self.q50 - self.q05 >= MIN_SEPARATION
            and self.q95 - self.q50 >= MIN_SEPARATION
        ):
            raise QuantileOrderError(
                f"Quantiles must be strictly increasing: {self.values}"
            )

    @property
    def values(self) -> tuple[float, float, float]:
        """
        The quantiles, in increasing order.
        """
        return self.q05, self.q50, self.q95


@dataclass(frozen=True, kw_only=True, slots=True)
class IntrinsicRange:
    """
    Support of the distributions fitted for one item.
    """

    lo: float
    """
    Lower end.
    """
    hi: float
    """
    Upper end.
    """
    overshoot: float = DEFAULT_OVERSHOOT
    """
    Fraction of the pooled spread the range was extended by on each side. Informational.
    """

    def __post_init__(self) -> None:
        if not (isfinite(self.lo) and isfinite(self.hi) and self.lo < self.hi):
            raise RangeError(f"Range must be nonempty: ({self.lo}, {self.hi})")
        if not self.overshoot >= 0:
            raise RangeError(f"Overshoot must be nonnegative: {self.overshoot}")

    @classmethod
    def pooled(
        cls, values: Iterable[float], overshoot: float = DEFAULT_OVERSHOOT
    ) -> "IntrinsicRange":
        """
        Range spanning all `values` extended by `overshoot` times their spread on each side.

        `values` are all elicited quantiles of an item plus its realization, if any.
        """
        values = tuple(values)
        if not values:
            raise RangeError("No values to pool")
        low, high = min(values), max(values)
        spread = high - low
        return cls(
            lo=low - overshoot * spread, hi=high + overshoot * spread, overshoot=overshoot
        )

    @property
    def width(self) -> float:
        """
        Length of the range.
        """
        return self.hi - self.lo


@dataclass(frozen=True, kw_only=True, slots=True)
class PiecewiseDistribution:
    """
    A continuous distribution with a piecewise-linear CDF, i.e. piecewise-constant density.

    Pieces with zero mass are allowed in the interior (a mixture of separated distributions),
    but the first and last pieces carry positive mass so that `quantile` is well defined
    on the whole closed unit interval. Immutable, hence safe to share.
    """

    values: tuple[float, ...]
    """
    Knot values, strictly increasing.
    """
    probabilities: tuple[float, ...]
    """
    Cumulative probabilities at the knots, nondecreasing from exactly 0 to exactly 1.
    """

    def __post_init__(self) -> None:
        values, probs = self.values, self.probabilities
        if len(values) != len(probs) or len(values) < 2:
            raise ValidationFailure(
                f"Need at least 2 knots of matching lengths: {len(values)}, {len(probs)}"
            )
        if not all(map(isfinite, values)) or not np_all(diff(values) > 0):
            raise ValidationFailure(f"Knot values must be strictly increasing: {values}")
        if probs[0] != 0 or probs[-1] != 1 or not np_all(diff(probs) >= 0):
            raise ValidationFailure(
                f"Knot probabilities must rise from 0 to 1: {probs}"
            )
        if not (probs[1] > 0 and probs[-2] < 1):
            raise ValidationFailure(f"End pieces must carry mass: {probs}")

    @property
    def support(self) -> tuple[float, float]:
        """
        Lowest and highest possible values.
        """
        return self.values[0], self.values[-1]

    @property
    def masses(self) -> NDArray[float64]:
        """
        Probability mass of each piece.
        """
        return diff(asarray(self.probabilities, dtype=float64))

    @property
    def mean(self) -> float:
        """
        Analytic mean.
        """
        values = asarray(self.values, dtype=float64)
        return float((self.masses * (values[:-1] + values[1:]) / 2).sum())

    @property
    def variance(self) -> float:
        """
        Analytic variance.
        """
        values = asarray(self.values, dtype=float64)
        lower, upper = values[:-1], values[1:]
        second = float(
            (self.masses * (lower * lower + lower * upper + upper * upper) / 3).sum()
        )
        return max(second - self.mean**2, 0.0)

    @property
    def quantiles(self) -> ElicitedQuantiles:
        """
        The 5th, 50th and 95th percentiles.
        """
        q05, q50, q95 = (float(self.quantile(level)) for level in QUANTILE_LEVELS)
        return ElicitedQuantiles(q05=q05, q50=q50, q95=q95)

    @overload
    def cdf(self, x: float) -> float: ...

    @overload
    def cdf(self, x: ArrayLike) -> NDArray[float64]: ...

    def cdf(self, x: ArrayLike) -> float | NDArray[float64]:
        """
        Cumulative distribution function. Total on the reals.
        """
        values = asarray(self.values, dtype=float64)
        probs = asarray(self.probabilities, dtype=float64)
        xs = asarray(x, dtype=float64)
        idx = clip(searchsorted(values, xs, side="right"), 1, values.size - 1)
        lower, upper = values[idx - 1], values[idx]
        t = clip((xs - lower) / (upper - lower), 0, 1)
        ret = (1 - t) * probs[idx - 1] + t * probs[idx]
        return float(ret) if ndim(ret) == 0 else ret

    @overload
    def quantile(self, p: float) -> float: ...

    @overload
    def quantile(self, p: ArrayLike) -> NDArray[float64]: ...

    def quantile(self, p: ArrayLike) -> float | NDArray[float64]:
        """
        Quantile function, the right-inverse of `cdf` on the unit interval.

        Raises `DomainError` if any probability lies outside [0, 1].
        """
        values = asarray(self.values, dtype=float64)
        probs = asarray(self.probabilities, dtype=float64)
        ps = asarray(p, dtype=float64)
        if not np_all((ps >= 0) & (ps <= 1)):  # also rejects NaN
            raise DomainError(f"Probability outside [0, 1]: {p}")
        idx = clip(searchsorted(probs, ps, side="left"), 1, probs.size - 1)
        lower, upper = probs[idx - 1], probs[idx]
        t = divide(
            ps - lower,
            upper - lower,
            out=zeros_like(ps, dtype=float64),
            where=upper > lower,
        )
        ret = (1 - t) * values[idx - 1] + t * values[idx]
        return float(ret) if ndim(ret) == 0 else ret

    def density(self, x: ArrayLike) -> float | NDArray[float64]:
        """
        Probability density function. Zero outside the support.

        At a knot, the density of the piece to its right is returned.
        """
        values = asarray(self.values, dtype=float64)
        xs = asarray(x, dtype=float64)
        idx = clip(searchsorted(values, xs, side="right"), 1, values.size - 1)
        heights = self.masses / diff(values)
        ret = heights[idx - 1] * ((xs >= values[0]) & (xs < values[-1]))
        return float(ret) if ndim(ret) == 0 else ret

    def conditional_quantile(
        self, u: ArrayLike, floor: float
    ) -> float | NDArray[float64]:
        """
        Quantile function of the distribution conditioned on exceeding its `floor` quantile.

        `u` in [0, 1) is mapped to `floor + (1 - floor) * u`.
        """
        if not 0 <= floor < 1:
            raise DomainError(f"Floor percentile outside [0, 1): {floor}")
        us = asarray(u, dtype=float64)
        return self.quantile(floor + (1 - floor) * us)

    def sample(
        self, stream: Generator, size: int | None = None
    ) -> float | NDArray[float64]:
        """
        Draw by inverse-transform sampling from `stream`.

        Deterministic given the stream state.
        """
        return self.quantile(stream.random(size))


def fit_distribution(q: ElicitedQuantiles, r: IntrinsicRange) -> PiecewiseDistribution:
    """
    Reconstruct the piecewise-uniform distribution of an elicited judgement over an intrinsic range.

    The knots are the range ends and the three quantiles; the pieces carry `PIECE_MASSES`.
    Raises `RangeError` unless the quantiles lie strictly inside the range.
    """
    if not (r.lo < q.q05 and q.q95 < r.hi):
        raise RangeError(
            f"Quantiles {q.values} not strictly inside range ({r.lo}, {r.hi})"
        )
    return PiecewiseDistribution(
        values=(r.lo, *q.values, r.hi),
        probabilities=(0.0, *QUANTILE_LEVELS, 1.0),
    )


def point_values(
    judgements: Iterable[ElicitedQuantiles], extra: Sequence[float] = ()
) -> Iterable[float]:
    """
    All quantile values of `judgements`, followed by `extra` values.
    """
    for judgement in judgements:
        yield from judgement.values
    yield from extra
