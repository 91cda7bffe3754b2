from dataclasses import dataclass, field
from decimal import Decimal
from math import isfinite
from re import compile
from typing import Mapping

from numpy import asarray, float64, full
from numpy.random import Generator
from numpy.typing import NDArray

from .._util import ValidationFailure
from ..classical import WEIGHT_TOLERANCE, WeightError, pool_mixture
from ..elicitation import DomainError, PiecewiseDistribution

_MONTH_PATTERN = compile(r"\d{4}-(?:0[1-9]|1[0-2])")
SEASON_START_MONTH = 7
"""
Month whose costs a seasonal history projects to December.
"""


class CategoryMismatchError(ValidationFailure):
    """
    Scenarios or baskets do not cover the same categories.
    """

    __slots__ = ()


class UnknownCategoryError(ValidationFailure):
    """
    A category is referenced but not part of the basket.
    """

    __slots__ = ()


class InsufficientHistoryError(ValidationFailure):
    """
    Too few seasonal observations to fit a Normal distribution.
    """

    __slots__ = ()


@dataclass(frozen=True, kw_only=True, slots=True)
class BasketDefinition:
    """
    A weighted bundle of food categories with a weekly cost.
    """

    name: str
    """
    Basket name.
    """
    weights: Mapping[str, float]
    """
    Expenditure share by category id.
    """
    baseline_cost: Decimal
    """
    Weekly cost at the baseline date, in pounds.
    """
    baseline_date: str
    """
    Calendar month of the baseline cost, `YYYY-MM`.
    """

    def __post_init__(self) -> None:
        if not self.weights:
            raise WeightError(f"Basket {self.name} has no categories")
        if not all(isfinite(w) and w >= 0 for w in self.weights.values()):
            raise WeightError(
                f"Basket {self.name} weights must be nonnegative: {dict(self.weights)}"
            )
        if abs(sum(self.weights.values()) - 1) > WEIGHT_TOLERANCE:
            raise WeightError(
                f"Basket {self.name} weights must sum to 1: {dict(self.weights)}"
            )
        if not (self.baseline_cost.is_finite() and self.baseline_cost > 0):
            raise DomainError(
                f"Basket {self.name} baseline cost must be positive: {self.baseline_cost}"
            )
        if not _MONTH_PATTERN.fullmatch(self.baseline_date):
            raise DomainError(
                f"Basket {self.name} baseline date must be YYYY-MM: {self.baseline_date}"
            )

    @property
    def baseline_month(self) -> int:
        return int(self.baseline_date[5:])

    @property
    def categories(self) -> tuple[str, ...]:
        """
        Category ids, sorted.
        """
        return tuple(sorted(self.weights))


@dataclass(frozen=True, kw_only=True, slots=True)
class ScenarioSet:
    """
    Per-scenario category distributions with scenario likelihood weights.
    """

    distributions: Mapping[str, Mapping[str, PiecewiseDistribution]]
    """
    Category distributions by scenario id.
    """
    weights: Mapping[str, float]
    """
    Likelihood weight by scenario id.
    """
    provenance: str = "equal"
    """
    Where `weights` come from, `elicited` or `equal`.
    """

    def __post_init__(self) -> None:
        if not self.distributions:
            raise ValidationFailure("Empty scenario set")
        categories = {frozenset(d) for d in self.distributions.values()}
        if len(categories) != 1:
            raise CategoryMismatchError(
                f"Scenarios cover different categories: {sorted(map(sorted, categories))}"
            )
        if self.weights.keys() != self.distributions.keys():
            raise WeightError(
                f"Need one weight per scenario: {sorted(self.weights)} != {sorted(self.distributions)}"
            )
        weights = asarray(tuple(self.weights.values()), dtype=float64)
        if not ((weights >= 0) & (weights <= 1)).all():
            raise WeightError(f"Scenario weights must lie in [0, 1]: {dict(self.weights)}")
        if abs(weights.sum() - 1) > WEIGHT_TOLERANCE:
            raise WeightError(f"Scenario weights must sum to 1: {dict(self.weights)}")
        if self.provenance not in ("elicited", "equal"):
            raise ValidationFailure(f"Unknown weight provenance: {self.provenance}")

    @classmethod
    def equal(
        cls, distributions: Mapping[str, Mapping[str, PiecewiseDistribution]]
    ) -> "ScenarioSet":
        """
        Scenario set with equal likelihood weights.
        """
        return cls(
            distributions=distributions,
            weights={scenario: 1 / len(distributions) for scenario in distributions},
            provenance="equal",
        )

    @property
    def scenarios(self) -> tuple[str, ...]:
        """
        Scenario ids, sorted.
        """
        return tuple(sorted(self.distributions))

    @property
    def categories(self) -> tuple[str, ...]:
        """
        Category ids, sorted.
        """
        return tuple(sorted(next(iter(self.distributions.values()))))


def mix_scenarios(scenarios: ScenarioSet, category: str) -> PiecewiseDistribution:
    """
    Likelihood-weighted mixture of a category's scenario distributions.
    """
    if category not in scenarios.categories:
        raise CategoryMismatchError(f"Category not in every scenario: {category}")
    ids = scenarios.scenarios
    return pool_mixture(
        [scenarios.distributions[s][category] for s in ids],
        [scenarios.weights[s] for s in ids],
    )


def pool_scenario_weights(
    elicited: Mapping[str, Mapping[str, float]],
    expert_weights: Mapping[str, float],
    scenarios: tuple[str, ...],
) -> dict[str, float]:
    """
    Combine experts' scenario likelihoods with their performance weights.

    Each expert's likelihoods must cover `scenarios` and sum to 1. Experts without
    likelihoods are ignored and the remaining weights renormalized.
    """
    for expert, likelihoods in elicited.items():
        if likelihoods.keys() != set(scenarios):
            raise WeightError(
                f"Expert {expert} scenario weights must cover {list(scenarios)}: {sorted(likelihoods)}"
            )
        if not all(0 <= w <= 1 for w in likelihoods.values()) or (
            abs(sum(likelihoods.values()) - 1) > WEIGHT_TOLERANCE
        ):
            raise WeightError(
                f"Expert {expert} scenario weights must sum to 1: {dict(likelihoods)}"
            )
    members = [
        (expert, weight)
        for expert, weight in expert_weights.items()
        if weight > 0 and expert in elicited
    ]
    total = sum(weight for _, weight in members)
    if total <= 0:
        raise WeightError("No weighted expert elicited scenario weights")
    ret = {
        scenario: sum(weight * elicited[expert][scenario] for expert, weight in members)
        / total
        for scenario in scenarios
    }
    norm = sum(ret.values())
    return {scenario: weight / norm for scenario, weight in ret.items()}


@dataclass(frozen=True, kw_only=True, slots=True)
class SeasonalHistory:
    """
    Past percent changes of overall food prices over the projection season.
    """

    observations: tuple[tuple[int, float], ...]
    """
    `(year, percent change)` pairs.
    """

    def __post_init__(self) -> None:
        if len(self.observations) < 2:
            raise InsufficientHistoryError(
                f"Need at least 2 observations: {len(self.observations)}"
            )
        years = [year for year, _ in self.observations]
        if len(set(years)) != len(years):
            raise DomainError(f"Duplicate years: {years}")
        if not all(isfinite(change) for _, change in self.observations):
            raise DomainError(f"Changes must be finite: {self.observations}")

    @property
    def changes(self) -> NDArray[float64]:
        """
        Percent changes, in year order.
        """
        return asarray([change for _, change in sorted(self.observations)], dtype=float64)

    @property
    def mean(self) -> float:
        """
        Sample mean.
        """
        return float(self.changes.mean())

    @property
    def variance(self) -> float:
        """
        Unbiased sample variance.
        """
        return float(self.changes.var(ddof=1))


@dataclass(frozen=True, kw_only=True, slots=True)
class BaselineProjection:
    """
    Baseline cost grown by a Normal seasonal percent change.

    A zero standard deviation is a point mass.
    """

    cost: float
    """
    Cost before projection.
    """
    mean: float = 0.0
    """
    Mean seasonal percent change.
    """
    sd: float = 0.0
    """
    Standard deviation of the seasonal percent change.
    """
    history: tuple[tuple[int, float], ...] = field(default=(), compare=False)
    """
    Observations the projection was fitted to, if any.
    """

    def __post_init__(self) -> None:
        if not (isfinite(self.cost) and self.cost > 0):
            raise DomainError(f"Baseline cost must be positive: {self.cost}")
        if not (isfinite(self.mean) and isfinite(self.sd) and self.sd >= 0):
            raise DomainError(f"Invalid Normal parameters: {self.mean}, {self.sd}")

    @property
    def expected_cost(self) -> float:
        """
        Analytic mean of the projected cost.
        """
        return self.cost * (1 + self.mean / 100)

    @property
    def cost_sd(self) -> float:
        """
        Analytic standard deviation of the projected cost.
        """
        return self.cost * self.sd / 100

    def sample(self, stream: Generator, size: int) -> NDArray[float64]:
        """
        Draw projected costs. A point mass does not consume `stream`.
        """
        if self.sd == 0:
            return full(size, self.expected_cost)
        return self.cost * (1 + stream.normal(self.mean, self.sd, size) / 100)


def project_baseline(
    cost: float, history: SeasonalHistory | None = None
) -> BaselineProjection:
    """
    Fit the seasonal percent change to `history` and project `cost` with it.

    Without history, `cost` is already the projected baseline and is used as a point mass.
    """
    if history is None:
        return BaselineProjection(cost=cost)
    return BaselineProjection(
        cost=cost,
        mean=history.mean,
        sd=history.variance**0.5,
        history=tuple(sorted(history.observations)),
    )
