from dataclasses import dataclass
from math import pi
from typing import Iterable, Mapping, Sequence

from numpy import (
    asarray,
    clip,
    concatenate,
    cumsum,
    empty,
    eye,
    float64,
    full,
    quantile,
    searchsorted,
    sin,
    zeros,
)
from numpy.linalg import LinAlgError, cholesky
from numpy.typing import NDArray
from scipy.special import ndtr  # type: ignore
from tqdm.auto import tqdm

from .._util import DEFAULT_MULTIPROCESSING_CONTEXT, new_stream
from ..elicitation import DomainError, PiecewiseDistribution
from . import (
    BaselineProjection,
    BasketDefinition,
    CategoryMismatchError,
    ScenarioSet,
    UnknownCategoryError,
)

CHUNK_SIZE = 65536
"""
Samples drawn per random stream. Chunks are the unit of parallel work.
"""
DEFAULT_SAMPLES = 10**6
"""
Default Monte Carlo sample count.
"""
_SCENARIO_STREAM = "scenario"
_BASELINE_STREAM = "baseline"


@dataclass(frozen=True, kw_only=True, slots=True)
class SamplingOptions:
    """
    How to draw Monte Carlo samples.
    """

    seed: int
    """
    Root seed of every random stream.
    """
    samples: int = DEFAULT_SAMPLES
    """
    Number of samples.
    """
    workers: int = 1
    """
    Number of processes. Does not affect results.
    """
    rank_correlation: float | tuple[tuple[float, ...], ...] = 0.0
    """
    Spearman rank correlation between categories, either one exchangeable value or a
    matrix ordered by sorted category id. Zero means independence.
    """
    show_progress: bool = False
    """
    Whether to show a progress bar over chunks.
    """

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"Seed must be a 64-bit unsigned integer: {self.seed}")
        if self.samples < 1:
            raise DomainError(f"Sample count must be positive: {self.samples}")
        if self.workers < 1:
            raise DomainError(f"Worker count must be positive: {self.workers}")


@dataclass(frozen=True, kw_only=True, slots=True)
class Summary:
    """
    Summary statistics of a sample.
    """

    mean: float
    """
    Sample mean.
    """
    sd: float
    """
    Sample standard deviation, 0 for a single sample.
    """
    median: float
    """
    50th percentile.
    """
    p05: float
    """
    5th percentile.
    """
    p95: float
    """
    95th percentile.
    """

    @classmethod
    def of(cls, samples: NDArray[float64]) -> "Summary":
        """
        Summarize samples. Percentiles interpolate linearly between order statistics.
        """
        if samples.size < 1:
            raise DomainError("No samples to summarize")
        p05, median, p95 = quantile(samples, (0.05, 0.5, 0.95), method="linear")
        return cls(
            mean=float(samples.mean()),
            sd=float(samples.std(ddof=1)) if samples.size > 1 else 0.0,
            median=float(median),
            p05=float(p05),
            p95=float(p95),
        )


@dataclass(frozen=True, kw_only=True, slots=True)
class BasketResult:
    """
    Summaries of one basket under one analysis.
    """

    basket: str
    """
    Basket name.
    """
    percent: Summary
    """
    Basket percent change.
    """
    change: Summary
    """
    Weekly cost change in pounds.
    """
    total: Summary
    """
    Weekly cost after the change in pounds.
    """
    samples: int
    """
    Number of samples.
    """


@dataclass(frozen=True, kw_only=True, slots=True)
class BasketSamples:
    """
    Raw Monte Carlo output for one basket.
    """

    basket: str
    """
    Basket name.
    """
    percent: NDArray[float64]
    """
    Basket percent change per sample.
    """
    baseline: NDArray[float64]
    """
    Projected baseline cost per sample.
    """

    @property
    def change(self) -> NDArray[float64]:
        """
        Weekly cost change per sample.
        """
        return self.baseline * self.percent / 100

    @property
    def total(self) -> NDArray[float64]:
        """
        Weekly cost after the change per sample.
        """
        return self.baseline + self.change

    def summarize(self) -> BasketResult:
        """
        Summarize every quantity.
        """
        return BasketResult(
            basket=self.basket,
            percent=Summary.of(self.percent),
            change=Summary.of(self.change),
            total=Summary.of(self.total),
            samples=self.percent.size,
        )


@dataclass(frozen=True, kw_only=True, slots=True)
class _Plan:
    seed: int
    categories: tuple[str, ...]
    weights: tuple[float, ...]
    # distributions[category][scenario]
    distributions: tuple[tuple[PiecewiseDistribution, ...], ...]
    scenario_weights: tuple[float, ...]
    baseline: BaselineProjection
    floor: float
    pins: tuple[float | None, ...]
    cholesky: NDArray[float64] | None


def copula_correlation(
    rank_correlation: float | Sequence[Sequence[float]], size: int
) -> NDArray[float64] | None:
    """
    Cholesky factor of the Gaussian copula correlation for a Spearman rank correlation.

    Returns `None` for independence.
    """
    if isinstance(rank_correlation, (int, float)):
        if not -1 < rank_correlation < 1:
            raise DomainError(f"Rank correlation outside (-1, 1): {rank_correlation}")
        if rank_correlation == 0 or size < 2:
            return None
        spearman = full((size, size), float(rank_correlation))
        spearman[range(size), range(size)] = 1
    else:
        spearman = asarray(rank_correlation, dtype=float64)
        if spearman.shape != (size, size):
            raise DomainError(f"Rank correlation must be {size}x{size}: {spearman.shape}")
        if not ((spearman == spearman.T).all() and (spearman.diagonal() == 1).all()):
            raise DomainError("Rank correlation matrix must be symmetric with unit diagonal")
        off_diagonal = spearman[~eye(size, dtype=bool)]
        if not ((off_diagonal > -1) & (off_diagonal < 1)).all():
            raise DomainError("Rank correlations must lie in (-1, 1)")
        if (spearman == eye(size)).all():
            return None
    pearson = 2 * sin(pi * spearman / 6)
    pearson[range(size), range(size)] = 1
    try:
        return cholesky(pearson)
    except LinAlgError:
        raise DomainError("Rank correlation is not positive definite") from None


def _uniforms(plan: _Plan, chunk: int, size: int) -> NDArray[float64]:
    streams = [
        new_stream(plan.seed, chunk, f"category:{category}")
        for category in plan.categories
    ]
    if plan.cholesky is None:
        return asarray([stream.random(size) for stream in streams], dtype=float64)
    normals = asarray([stream.standard_normal(size) for stream in streams])
    return ndtr(plan.cholesky @ normals)


def _run_chunk(args: tuple[_Plan, int, int]) -> tuple[NDArray[float64], NDArray[float64]]:
    plan, chunk, size = args
    uniforms = _uniforms(plan, chunk, size)
    if len(plan.scenario_weights) > 1:
        bounds = cumsum(plan.scenario_weights)
        bounds[-1] = 1
        scenario = clip(
            searchsorted(
                bounds,
                new_stream(plan.seed, chunk, _SCENARIO_STREAM).random(size),
                side="right",
            ),
            0,
            len(bounds) - 1,
        )
    else:
        scenario = zeros(size, dtype=int)
    percent = zeros(size, dtype=float64)
    for row, weight, dists, pin in zip(
        uniforms, plan.weights, plan.distributions, plan.pins, strict=True
    ):
        values = empty(size, dtype=float64)
        for idx, dist in enumerate(dists):
            mask = scenario == idx
            if pin is not None:
                values[mask] = dist.quantile(pin)
            else:
                values[mask] = dist.conditional_quantile(row[mask], plan.floor)
        percent += weight * values
    baseline = plan.baseline.sample(
        new_stream(plan.seed, chunk, _BASELINE_STREAM), size
    )
    return percent, baseline


def _chunks(samples: int) -> Iterable[tuple[int, int]]:
    for chunk, start in enumerate(range(0, samples, CHUNK_SIZE)):
        yield chunk, min(CHUNK_SIZE, samples - start)


def _simulate(plan: _Plan, basket: str, options: SamplingOptions) -> BasketSamples:
    jobs = [(plan, chunk, size) for chunk, size in _chunks(options.samples)]
    progress = tqdm(
        total=len(jobs),
        disable=not options.show_progress,
        desc=basket,
        unit="chunk",
    )
    results = list[tuple[NDArray[float64], NDArray[float64]]]()
    with progress:
        if options.workers > 1 and len(jobs) > 1:
            with DEFAULT_MULTIPROCESSING_CONTEXT.Pool(
                min(options.workers, len(jobs))
            ) as pool:
                for result in pool.imap(_run_chunk, jobs):
                    results.append(result)
                    progress.update()
        else:
            for job in jobs:
                results.append(_run_chunk(job))
                progress.update()
    return BasketSamples(
        basket=basket,
        percent=concatenate([percent for percent, _ in results]),
        baseline=concatenate([baseline for _, baseline in results]),
    )


def _plan(
    basket: BasketDefinition,
    distributions: Mapping[str, Sequence[PiecewiseDistribution]],
    scenario_weights: Sequence[float],
    baseline: BaselineProjection,
    options: SamplingOptions,
    *,
    floor: float = 0.0,
    pins: Mapping[str, float] | None = None,
) -> _Plan:
    categories = basket.categories
    missing = [category for category in categories if category not in distributions]
    if missing:
        raise CategoryMismatchError(
            f"Basket {basket.name} categories lack distributions: {missing}"
        )
    pins = pins or {}
    unknown = sorted(pins.keys() - set(categories))
    if unknown:
        raise UnknownCategoryError(
            f"Pinned categories not in basket {basket.name}: {unknown}"
        )
    for category, level in pins.items():
        if not 0 <= level <= 1:
            raise DomainError(f"Pinned percentile of {category} outside [0, 1]: {level}")
    if not 0 <= floor < 1:
        raise DomainError(f"Floor percentile outside [0, 1): {floor}")
    return _Plan(
        seed=options.seed,
        categories=categories,
        weights=tuple(basket.weights[category] for category in categories),
        distributions=tuple(tuple(distributions[category]) for category in categories),
        scenario_weights=tuple(scenario_weights),
        baseline=baseline,
        floor=floor,
        pins=tuple(pins.get(category) for category in categories),
        cholesky=copula_correlation(options.rank_correlation, len(categories)),
    )


def simulate_basket(
    basket: BasketDefinition,
    distributions: Mapping[str, PiecewiseDistribution],
    baseline: BaselineProjection,
    options: SamplingOptions,
    *,
    floor: float = 0.0,
    pins: Mapping[str, float] | None = None,
) -> BasketSamples:
    """
    Draw basket percent changes and baseline costs.

    Category `c` in chunk `k` draws from the stream keyed by `(seed, k, "category:c")`, so the output
    depends neither on category order nor on the worker count. Categories in `pins` take
    their fixed quantile; the others are drawn above their `floor` quantile.
    """
    return _simulate(
        _plan(
            basket,
            {category: (d,) for category, d in distributions.items()},
            (1.0,),
            baseline,
            options,
            floor=floor,
            pins=pins,
        ),
        basket.name,
        options,
    )


def simulate_joint(
    basket: BasketDefinition,
    scenarios: ScenarioSet,
    baseline: BaselineProjection,
    options: SamplingOptions,
) -> BasketSamples:
    """
    Draw basket samples where each sample first draws one scenario shared by all categories.
    """
    ids = scenarios.scenarios
    return _simulate(
        _plan(
            basket,
            {
                category: tuple(scenarios.distributions[s][category] for s in ids)
                for category in scenarios.categories
            },
            tuple(scenarios.weights[s] for s in ids),
            baseline,
            options,
        ),
        basket.name,
        options,
    )


def propagate_basket(
    basket: BasketDefinition,
    distributions: Mapping[str, PiecewiseDistribution],
    baseline: BaselineProjection,
    options: SamplingOptions,
) -> BasketResult:
    """
    Propagate category price changes through a basket.
    """
    return simulate_basket(basket, distributions, baseline, options).summarize()


def propagate_joint(
    basket: BasketDefinition,
    scenarios: ScenarioSet,
    baseline: BaselineProjection,
    options: SamplingOptions,
) -> BasketResult:
    """
    Propagate a scenario mixture, drawing one scenario per sample.
    """
    return simulate_joint(basket, scenarios, baseline, options).summarize()


def conditional_tail(
    basket: BasketDefinition,
    distributions: Mapping[str, PiecewiseDistribution],
    baseline: BaselineProjection,
    floor: float,
    options: SamplingOptions,
) -> BasketResult:
    """
    Propagate with every category conditioned on exceeding its own `floor` quantile.
    """
    return simulate_basket(
        basket, distributions, baseline, options, floor=floor
    ).summarize()


def pinned_whatif(
    basket: BasketDefinition,
    distributions: Mapping[str, PiecewiseDistribution],
    baseline: BaselineProjection,
    pins: Mapping[str, float],
    options: SamplingOptions,
) -> BasketResult:
    """
    Propagate with some categories fixed at a percentile and the others sampled.
    """
    return simulate_basket(
        basket, distributions, baseline, options, pins=pins
    ).summarize()
