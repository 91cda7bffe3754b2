from dataclasses import dataclass, field
from logging import getLogger
from math import isfinite
from typing import Mapping, Sequence

from numpy import (
    asarray,
    concatenate,
    float64,
    int64,
    maximum,
    minimum,
    searchsorted,
    unique,
    zeros,
    zeros_like,
)
from numpy.typing import ArrayLike, NDArray
from tqdm.auto import tqdm

from .._util import NumericalFailure, ValidationFailure
from ..elicitation import (
    DEFAULT_OVERSHOOT,
    PIECE_MASSES,
    DomainError,
    ElicitedQuantiles,
    IntrinsicRange,
    PiecewiseDistribution,
    fit_distribution,
    point_values,
)
from .scoring import calibration_score, mean_information

_LOGGER = getLogger(__name__)

WEIGHT_TOLERANCE = 1e-9
"""
Allowed deviation of a weight vector's sum from 1.
"""


class MissingJudgementError(ValidationFailure):
    """
    An expert has no judgement for an item it is scored or pooled on.
    """

    __slots__ = ()


class WeightError(ValidationFailure):
    """
    Weights are negative, mismatched, or do not sum to 1.
    """

    __slots__ = ()


class AllExcludedError(NumericalFailure):
    """
    The cutoff excludes every expert, or every remaining expert has zero weight.
    """

    __slots__ = ()


class NoFeasibleCutoffError(NumericalFailure):
    """
    No candidate cutoff yields a Decision Maker.
    """

    __slots__ = ()


@dataclass(frozen=True, kw_only=True, slots=True)
class CalibrationItem:
    """
    A question with a known realization, used to score experts.
    """

    item_id: str
    """
    Item identifier.
    """
    realization: float
    """
    Observed true value.
    """
    judgements: Mapping[str, ElicitedQuantiles]
    """
    Judgements by expert identifier.
    """

    def __post_init__(self) -> None:
        if not isfinite(self.realization):
            raise DomainError(
                f"Realization of {self.item_id} must be finite: {self.realization}"
            )
        if not self.judgements:
            raise MissingJudgementError(f"No judgements for item: {self.item_id}")

    def intrinsic_range(self, overshoot: float = DEFAULT_OVERSHOOT) -> IntrinsicRange:
        """
        Range pooled over all judgements and the realization.
        """
        return IntrinsicRange.pooled(
            point_values(self.judgements.values(), (self.realization,)), overshoot
        )


@dataclass(frozen=True, kw_only=True, slots=True)
class PerformanceScore:
    """
    Calibration and information of an expert, real or virtual.
    """

    calibration: float
    """
    Statistical accuracy, a probability.
    """
    information: float
    """
    Mean information score in nats.
    """

    @property
    def combined(self) -> float:
        """
        Product of calibration and information.
        """
        return self.calibration * self.information


@dataclass(frozen=True, kw_only=True, slots=True)
class ExpertScore:
    """
    Performance and resulting weight of one expert at one cutoff.
    """

    expert_id: str
    """
    Expert identifier.
    """
    calibration: float
    """
    Statistical accuracy, a probability.
    """
    information: float
    """
    Mean information score in nats.
    """
    raw_weight: float
    """
    `calibration * information` if `calibration` reaches the cutoff, else 0.
    """
    norm_weight: float
    """
    `raw_weight` normalized over the panel.
    """


@dataclass(frozen=True, kw_only=True, slots=True)
class DecisionMaker:
    """
    Weighted mixture of expert distributions, per item.
    """

    weights: Mapping[str, float]
    """
    Normalized panel weights used for pooling.
    """
    distributions: Mapping[str, PiecewiseDistribution]
    """
    Pooled distribution by item.
    """
    ranges: Mapping[str, IntrinsicRange] = field(default_factory=dict)
    """
    Intrinsic range by item.
    """

    @property
    def quantiles(self) -> dict[str, ElicitedQuantiles]:
        """
        Re-extracted 5th, 50th and 95th percentiles by item.
        """
        return {item: d.quantiles for item, d in self.distributions.items()}


@dataclass(frozen=True, kw_only=True, slots=True)
class CutoffResult:
    """
    Outcome of choosing a calibration cutoff.
    """

    cutoff: float
    """
    The chosen cutoff.
    """
    experts: tuple[ExpertScore, ...]
    """
    Expert scores and weights at the chosen cutoff.
    """
    decision_maker: DecisionMaker
    """
    Decision Maker over the calibration items at the chosen cutoff.
    """
    score: PerformanceScore
    """
    Performance of the Decision Maker on the calibration items.
    """
    candidates: tuple[tuple[float, PerformanceScore], ...]
    """
    Every feasible candidate cutoff with its Decision Maker's performance, ascending.
    """

    @property
    def weights(self) -> dict[str, float]:
        """
        Normalized weights by expert.
        """
        return {score.expert_id: score.norm_weight for score in self.experts}


def _bin(q: ElicitedQuantiles, realization: float) -> int:
    # realizations on a quantile count towards the upper bin
    return int(searchsorted(q.values, realization, side="right"))


def panel_of(items: Sequence[CalibrationItem]) -> tuple[str, ...]:
    """
    Sorted identifiers of every expert judging any of `items`.
    """
    return tuple(sorted({expert for item in items for expert in item.judgements}))


def bin_counts(items: Sequence[CalibrationItem], expert: str) -> NDArray[int64]:
    """
    Count the realizations falling below the 5th percentile, in [5th, 50th), in [50th, 95th)
    and at or above the 95th percentile of the expert's judgements.
    """
    ret = zeros(len(PIECE_MASSES), dtype=int64)
    for item in items:
        try:
            q = item.judgements[expert]
        except KeyError:
            raise MissingJudgementError(
                f"Expert {expert} did not judge item: {item.item_id}"
            ) from None
        ret[_bin(q, item.realization)] += 1
    return ret


def expert_performance(
    items: Sequence[CalibrationItem],
    expert: str,
    overshoot: float = DEFAULT_OVERSHOOT,
) -> PerformanceScore:
    """
    Calibration and mean information of an expert over calibration items.

    Each item is scored on its own intrinsic range, realization included.
    """
    if not items:
        raise DomainError("No calibration items")
    counts = bin_counts(items, expert)
    ranges = [item.intrinsic_range(overshoot) for item in items]
    return PerformanceScore(
        calibration=calibration_score(counts, len(items)),
        information=mean_information(
            [
                fit_distribution(item.judgements[expert], r)
                for item, r in zip(items, ranges)
            ],
            ranges,
        ),
    )


def compute_weights(
    scores: Sequence[tuple[float, float]], cutoff: float
) -> NDArray[float64]:
    """
    Normalized performance weights for `(calibration, information)` pairs at a cutoff.

    An expert whose calibration is below `cutoff` gets weight 0.
    """
    if not 0 <= cutoff <= 1:
        raise DomainError(f"Cutoff outside [0, 1]: {cutoff}")
    if not scores:
        raise DomainError("No experts to weigh")
    pairs = asarray(scores, dtype=float64).reshape(len(scores), 2)
    calibrations, informations = pairs[:, 0], pairs[:, 1]
    if not ((calibrations >= 0) & (calibrations <= 1)).all():
        raise DomainError(f"Calibration outside [0, 1]: {calibrations.tolist()}")
    if not (informations >= 0).all():
        raise DomainError(f"Information must be nonnegative: {informations.tolist()}")
    raw = calibrations * informations * (calibrations >= cutoff)
    total = raw.sum()
    if total <= 0:
        raise AllExcludedError(f"Cutoff {cutoff} excludes every expert")
    return raw / total


def score_experts(
    performance: Mapping[str, PerformanceScore], cutoff: float
) -> tuple[ExpertScore, ...]:
    """
    Weigh every expert of `performance`, in its order, at a cutoff.
    """
    pairs = [(p.calibration, p.information) for p in performance.values()]
    weights = compute_weights(pairs, cutoff)
    return tuple(
        ExpertScore(
            expert_id=expert,
            calibration=p.calibration,
            information=p.information,
            raw_weight=p.combined if p.calibration >= cutoff else 0.0,
            norm_weight=float(weight),
        )
        for (expert, p), weight in zip(performance.items(), weights, strict=True)
    )


def equal_weights(experts: Sequence[str]) -> dict[str, float]:
    """
    Equal weights over a panel, for when no calibration items exist.
    """
    if not experts:
        raise DomainError("Empty expert panel")
    _LOGGER.warning("no calibration items, weighting %d experts equally", len(experts))
    return {expert: 1 / len(experts) for expert in experts}


def pool_mixture(
    dists: Sequence[PiecewiseDistribution], weights: ArrayLike
) -> PiecewiseDistribution:
    """
    Linear pool of distributions, re-expressed on the union of their knots.

    The mixture CDF is linear between consecutive union knots, so it is exact.
    Zero-weight components are dropped.
    """
    ws = asarray(weights, dtype=float64)
    if not dists or ws.shape != (len(dists),):
        raise WeightError(f"Need one weight per distribution: {ws.tolist()}")
    if not ((ws >= 0) & (ws <= 1)).all():
        raise WeightError(f"Weights must lie in [0, 1]: {ws.tolist()}")
    if abs(ws.sum() - 1) > WEIGHT_TOLERANCE:
        raise WeightError(f"Weights must sum to 1: {ws.tolist()}")
    kept = [(d, w) for d, w in zip(dists, ws) if w > 0]
    knots = unique(concatenate([asarray(d.values, dtype=float64) for d, _ in kept]))
    probs = zeros_like(knots)
    for d, w in kept:
        probs += w * d.cdf(knots)
    probs = minimum(maximum.accumulate(probs), 1.0)
    probs[0], probs[-1] = 0.0, 1.0
    return PiecewiseDistribution(
        values=tuple(knots.tolist()), probabilities=tuple(probs.tolist())
    )


def build_decision_maker(
    judgements: Mapping[str, Mapping[str, ElicitedQuantiles]],
    weights: Mapping[str, float],
    overshoot: float = DEFAULT_OVERSHOOT,
    realizations: Mapping[str, float] | None = None,
) -> DecisionMaker:
    """
    Pool judgements by item with global expert weights.

    `judgements` maps item to expert to judgement. Each item's intrinsic range covers every
    judgement of it, weighted or not, and its realization if given. Weights are renormalized
    over the weighted experts that judged an item.
    """
    realizations = realizations or {}
    distributions = dict[str, PiecewiseDistribution]()
    ranges = dict[str, IntrinsicRange]()
    for item, panel in judgements.items():
        extra = (realizations[item],) if item in realizations else ()
        r = IntrinsicRange.pooled(point_values(panel.values(), extra), overshoot)
        members = [
            (expert, weight)
            for expert, weight in weights.items()
            if weight > 0 and expert in panel
        ]
        total = sum(weight for _, weight in members)
        if total <= 0:
            raise AllExcludedError(f"No weighted expert judged item: {item}")
        distributions[item] = pool_mixture(
            [fit_distribution(panel[expert], r) for expert, _ in members],
            [weight / total for _, weight in members],
        )
        ranges[item] = r
    return DecisionMaker(
        weights=dict(weights), distributions=distributions, ranges=ranges
    )


def score_decision_maker(
    dm: DecisionMaker, items: Sequence[CalibrationItem]
) -> PerformanceScore:
    """
    Score a Decision Maker as a virtual expert through its re-extracted percentiles.
    """
    if not items:
        raise DomainError("No calibration items")
    counts = zeros(len(PIECE_MASSES), dtype=int64)
    dists, ranges = list[PiecewiseDistribution](), list[IntrinsicRange]()
    for item in items:
        try:
            d, r = dm.distributions[item.item_id], dm.ranges[item.item_id]
        except KeyError:
            raise MissingJudgementError(
                f"Decision Maker lacks item: {item.item_id}"
            ) from None
        q = d.quantiles
        counts[_bin(q, item.realization)] += 1
        dists.append(fit_distribution(q, r))
        ranges.append(r)
    return PerformanceScore(
        calibration=calibration_score(counts, len(items)),
        information=mean_information(dists, ranges),
    )


def _assess(
    items: Sequence[CalibrationItem],
    experts: Sequence[str],
    overshoot: float,
) -> dict[str, PerformanceScore]:
    if not experts:
        raise DomainError("Empty expert panel")
    return {expert: expert_performance(items, expert, overshoot) for expert in experts}


def _evaluate(
    items: Sequence[CalibrationItem],
    performance: Mapping[str, PerformanceScore],
    cutoff: float,
    overshoot: float,
) -> tuple[tuple[ExpertScore, ...], DecisionMaker, PerformanceScore]:
    experts = score_experts(performance, cutoff)
    dm = build_decision_maker(
        {item.item_id: item.judgements for item in items},
        {score.expert_id: score.norm_weight for score in experts},
        overshoot,
        {item.item_id: item.realization for item in items},
    )
    return experts, dm, score_decision_maker(dm, items)


def evaluate_cutoff(
    items: Sequence[CalibrationItem],
    experts: Sequence[str],
    cutoff: float,
    overshoot: float = DEFAULT_OVERSHOOT,
) -> CutoffResult:
    """
    Weigh experts and build the Decision Maker at a fixed cutoff.
    """
    performance = _assess(items, experts, overshoot)
    scores, dm, dm_score = _evaluate(items, performance, cutoff, overshoot)
    excluded = sum(score.raw_weight == 0 for score in scores)
    if excluded:
        _LOGGER.warning("cutoff %g excludes %d experts", cutoff, excluded)
    return CutoffResult(
        cutoff=cutoff,
        experts=scores,
        decision_maker=dm,
        score=dm_score,
        candidates=((cutoff, dm_score),),
    )


def optimize_cutoff(
    items: Sequence[CalibrationItem],
    experts: Sequence[str],
    overshoot: float = DEFAULT_OVERSHOOT,
    *,
    show_progress: bool = False,
) -> CutoffResult:
    """
    Choose the cutoff whose Decision Maker scores best on the calibration items.

    Candidates are 0 and every expert's calibration. Infeasible candidates are skipped.
    Ties go to the smallest cutoff.
    """
    performance = _assess(items, experts, overshoot)
    candidates = sorted({0.0, *(p.calibration for p in performance.values())})
    feasible = list[tuple[float, PerformanceScore]]()
    best: tuple[float, tuple[ExpertScore, ...], DecisionMaker, PerformanceScore] | None
    best = None
    for cutoff in tqdm(
        candidates,
        disable=not show_progress,
        desc="cutoff",
        unit="candidate",
    ):
        try:
            scores, dm, dm_score = _evaluate(items, performance, cutoff, overshoot)
        except AllExcludedError as exc:
            _LOGGER.debug("skipping cutoff %g: %s", cutoff, exc)
            continue
        feasible.append((cutoff, dm_score))
        if best is None or dm_score.combined > best[3].combined:
            best = cutoff, scores, dm, dm_score
    if best is None:
        raise NoFeasibleCutoffError(f"None of {len(candidates)} cutoffs is feasible")
    cutoff, scores, dm, dm_score = best
    _LOGGER.info(
        "optimized cutoff %g: calibration %g, information %g",
        cutoff,
        dm_score.calibration,
        dm_score.information,
    )
    return CutoffResult(
        cutoff=cutoff,
        experts=scores,
        decision_maker=dm,
        score=dm_score,
        candidates=tuple(feasible),
    )
