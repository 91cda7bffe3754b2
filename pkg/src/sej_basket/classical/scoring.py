from math import exp, pi, sqrt
from typing import Sequence

from numpy import asarray, float64, int64, log
from numpy.typing import ArrayLike
from scipy.special import erf, erfc, gammainc, gammaincc  # type: ignore

from ..elicitation import PIECE_MASSES, DomainError, IntrinsicRange, PiecewiseDistribution, RangeError

CALIBRATION_DEGREES_OF_FREEDOM = len(PIECE_MASSES) - 1
"""
Degrees of freedom of the calibration statistic.
"""


def chi2_cdf(x: float, dof: float) -> float:
    """
    Chi-square distribution function, via the regularized lower incomplete gamma function.
    """
    if dof <= 0:
        raise DomainError(f"Degrees of freedom must be positive: {dof}")
    if x <= 0:
        return 0.0
    return float(gammainc(dof / 2, x / 2))


def chi2_sf(x: float, dof: float) -> float:
    """
    Chi-square survival function, via the regularized upper incomplete gamma function.

    More accurate than `1 - chi2_cdf(x, dof)` in the upper tail.
    """
    if dof <= 0:
        raise DomainError(f"Degrees of freedom must be positive: {dof}")
    if x <= 0:
        return 1.0
    return float(gammaincc(dof / 2, x / 2))


def chi2_cdf3(x: float) -> float:
    """
    Chi-square distribution function with 3 degrees of freedom, closed form.
    """
    if x <= 0:
        return 0.0
    return float(erf(sqrt(x / 2))) - sqrt(2 * x / pi) * exp(-x / 2)


def chi2_sf3(x: float) -> float:
    """
    Chi-square survival function with 3 degrees of freedom, closed form.
    """
    if x <= 0:
        return 1.0
    return float(erfc(sqrt(x / 2))) + sqrt(2 * x / pi) * exp(-x / 2)


def relative_entropy(a: ArrayLike, p: ArrayLike) -> float:
    """
    Relative entropy (in nats) of the probability vector `a` with respect to `p`.

    Terms with `a_i = 0` contribute 0.
    """
    a_arr, p_arr = asarray(a, dtype=float64), asarray(p, dtype=float64)
    nonzero = a_arr > 0
    return float((a_arr[nonzero] * log(a_arr[nonzero] / p_arr[nonzero])).sum())


def calibration_score(s: ArrayLike, n: int) -> float:
    """
    Statistical accuracy of an expert whose `n` realizations fell into the inter-quantile bins with counts `s`.

    It is the probability that a perfectly calibrated expert shows a divergence from the
    expected bin proportions at least as large, under the chi-square approximation.
    """
    counts = asarray(s)
    if counts.shape != (len(PIECE_MASSES),):
        raise DomainError(f"Expected {len(PIECE_MASSES)} bin counts: {s}")
    if (counts < 0).any() or (counts != counts.astype(int64)).any():
        raise DomainError(f"Bin counts must be nonnegative integers: {s}")
    if n < 1 or counts.sum() != n:
        raise DomainError(f"Bin counts must sum to the item count {n}: {s}")
    divergence = relative_entropy(counts / n, PIECE_MASSES)
    return chi2_sf(2 * n * divergence, CALIBRATION_DEGREES_OF_FREEDOM)


def information_score(d: PiecewiseDistribution, r: IntrinsicRange) -> float:
    """
    Relative entropy (in nats) of `d` with respect to the uniform background on `r`.

    Higher means more concentrated. Never negative.
    """
    lo, hi = d.support
    if lo < r.lo or hi > r.hi:
        raise RangeError(f"Distribution support ({lo}, {hi}) outside range ({r.lo}, {r.hi})")
    widths = asarray(d.values[1:], dtype=float64) - asarray(d.values[:-1], dtype=float64)
    background = widths / r.width
    masses = d.masses
    if ((background <= 0) & (masses > 0)).any():
        raise RangeError(f"Piece with zero background mass: {d.values}")
    return max(relative_entropy(masses, background), 0.0)


def mean_information(
    distributions: Sequence[PiecewiseDistribution], ranges: Sequence[IntrinsicRange]
) -> float:
    """
    Average information score over items.
    """
    if len(distributions) != len(ranges) or not distributions:
        raise DomainError(
            f"Need matching, nonempty items: {len(distributions)}, {len(ranges)}"
        )
    return sum(map(information_score, distributions, ranges)) / len(distributions)
