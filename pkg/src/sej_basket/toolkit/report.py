from dataclasses import dataclass, fields, is_dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from io import StringIO
from json import dumps, loads
from typing import Any, Literal, Mapping, Self

from anyio import Path

from .._util import SupportsWrite, ValidationFailure
from ..classical import CutoffResult, ExpertScore
from ..elicitation import PiecewiseDistribution
from ..propagation import BaselineProjection, BasketDefinition
from ..propagation.monte_carlo import BasketResult, Summary
from . import CENT, IoError, ParseError, ValidationError

REPORT_FORMAT = "sej-basket/report/1"
"""
Identifier of the structured report layout.
"""
PIN_INTERPRETATION = (
    "pinned categories take their stated percentile in every sample; "
    "the other categories are sampled independently"
)
"""
How pinned what-ifs are to be read.
"""

Analysis = Literal["scenario", "mixture", "tail", "pinned"]


def _cents(value: float | Decimal) -> Decimal:
    return Decimal(repr(value) if isinstance(value, float) else value).quantize(
        CENT, rounding=ROUND_HALF_EVEN
    )


def _plain(value: Decimal) -> str:
    if value == 0:
        return "0"
    return f"{value.normalize():f}"


@dataclass(frozen=True, kw_only=True, slots=True)
class Stats:
    """
    Summary statistics rounded to cents.
    """

    mean: Decimal
    sd: Decimal
    median: Decimal
    p05: Decimal
    p95: Decimal

    @classmethod
    def of(cls, summary: Summary) -> Self:
        return cls(
            mean=_cents(summary.mean),
            sd=_cents(summary.sd),
            median=_cents(summary.median),
            p05=_cents(summary.p05),
            p95=_cents(summary.p95),
        )

    def __str__(self) -> str:
        return (
            f"{_plain(self.median)} ({_plain(self.p05)}, {_plain(self.p95)}); "
            f"mean {_plain(self.mean)}, sd {_plain(self.sd)}"
        )


@dataclass(frozen=True, kw_only=True, slots=True)
class ExpertRecord:
    """
    One expert's scores and weights.
    """

    expert: str
    calibration: float | None
    information: float | None
    raw_weight: float
    norm_weight: float

    @classmethod
    def of(cls, score: ExpertScore) -> Self:
        return cls(
            expert=score.expert_id,
            calibration=score.calibration,
            information=score.information,
            raw_weight=score.raw_weight,
            norm_weight=score.norm_weight,
        )


@dataclass(frozen=True, kw_only=True, slots=True)
class WeightingRecord:
    """
    How the experts were weighted.
    """

    mode: Literal["optimized", "fixed", "equal"]
    """
    `equal` when there are no calibration items.
    """
    cutoff: float | None
    experts: tuple[ExpertRecord, ...]
    calibration: float | None
    """
    Decision Maker calibration on the calibration items.
    """
    information: float | None
    """
    Decision Maker mean information on the calibration items.
    """
    candidates: tuple[tuple[float, float, float], ...] = ()
    """
    `(cutoff, calibration, information)` of every feasible cutoff tried.
    """

    @classmethod
    def of(
        cls,
        result: CutoffResult,
        mode: Literal["optimized", "fixed"],
        extra: Mapping[str, float],
    ) -> Self:
        """
        Record a cutoff result. `extra` holds the weights of experts without calibration scores.
        """
        return cls(
            mode=mode,
            cutoff=result.cutoff,
            experts=(
                *map(ExpertRecord.of, result.experts),
                *(
                    ExpertRecord(
                        expert=expert,
                        calibration=None,
                        information=None,
                        raw_weight=weight,
                        norm_weight=weight,
                    )
                    for expert, weight in sorted(extra.items())
                ),
            ),
            calibration=result.score.calibration,
            information=result.score.information,
            candidates=tuple(
                (cutoff, score.calibration, score.information)
                for cutoff, score in result.candidates
            ),
        )

    @classmethod
    def equal(cls, weights: Mapping[str, float]) -> Self:
        return cls(
            mode="equal",
            cutoff=None,
            experts=tuple(
                ExpertRecord(
                    expert=expert,
                    calibration=None,
                    information=None,
                    raw_weight=weight,
                    norm_weight=weight,
                )
                for expert, weight in sorted(weights.items())
            ),
            calibration=None,
            information=None,
        )


@dataclass(frozen=True, kw_only=True, slots=True)
class CategoryRecord:
    """
    Decision Maker percentiles of one category under one scenario, in percent.
    """

    category: str
    scenario: str
    q05: Decimal
    q50: Decimal
    q95: Decimal
    mean: Decimal

    @classmethod
    def of(cls, category: str, scenario: str, d: PiecewiseDistribution) -> Self:
        q = d.quantiles
        return cls(
            category=category,
            scenario=scenario,
            q05=_cents(q.q05),
            q50=_cents(q.q50),
            q95=_cents(q.q95),
            mean=_cents(d.mean),
        )

    def __str__(self) -> str:
        return f"{_plain(self.q50)} ({_plain(self.q05)}, {_plain(self.q95)})"


@dataclass(frozen=True, kw_only=True, slots=True)
class BasketRecord:
    """
    One basket under one analysis.
    """

    basket: str
    analysis: Analysis
    scenario: str
    """
    Scenario id, or `mixture`.
    """
    floor: float | None
    """
    Conditioning percentile of a `tail` analysis.
    """
    pins: tuple[tuple[str, float], ...]
    """
    `(category, percentile)` of a `pinned` analysis, sorted.
    """
    samples: int
    baseline_cost: Decimal
    baseline_date: str
    projected_cost: Decimal
    projected_sd: Decimal
    percent: Stats
    change: Stats
    """
    Weekly cost change in pounds.
    """
    total: Stats
    """
    Weekly cost after the change in pounds.
    """

    @classmethod
    def of(
        cls,
        basket: BasketDefinition,
        baseline: BaselineProjection,
        result: BasketResult,
        *,
        analysis: Analysis,
        scenario: str,
        floor: float | None = None,
        pins: Mapping[str, float] | None = None,
    ) -> Self:
        return cls(
            basket=basket.name,
            analysis=analysis,
            scenario=scenario,
            floor=floor,
            pins=tuple(sorted((pins or {}).items())),
            samples=result.samples,
            baseline_cost=_cents(basket.baseline_cost),
            baseline_date=basket.baseline_date,
            projected_cost=_cents(baseline.expected_cost),
            projected_sd=_cents(baseline.cost_sd),
            percent=Stats.of(result.percent),
            change=Stats.of(result.change),
            total=Stats.of(result.total),
        )

    @property
    def label(self) -> str:
        match self.analysis:
            case "tail":
                return f"{self.scenario} above p{self.floor!r}"
            case "pinned":
                return f"{self.scenario} pinned " + ", ".join(
                    f"{category}=p{p!r}" for category, p in self.pins
                )
            case _:
                return self.scenario


@dataclass(frozen=True, kw_only=True, slots=True)
class PropagationReport:
    """
    Everything a run computed, in a deterministic layout.
    """

    version: str
    config_hash: str
    seed: int
    samples: int
    overshoot: float
    mixture: Literal["category", "joint"]
    rank_correlation: float
    scenario_provenance: Literal["elicited", "equal"] | None
    scenario_weights: tuple[tuple[str, float], ...]
    weighting: WeightingRecord | None
    categories: tuple[CategoryRecord, ...]
    baskets: tuple[BasketRecord, ...]
    notes: tuple[str, ...]
    format: str = REPORT_FORMAT


def _encode(value: Any) -> Any:
    if is_dataclass(value):
        return {f.name: _encode(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, tuple):
        return [_encode(item) for item in value]
    if isinstance(value, Decimal):
        return float(value)
    return value


def dumps_report(report: PropagationReport) -> str:
    """
    Serialize a report. Equal reports serialize to equal strings.
    """
    return (
        dumps(
            _encode(report),
            allow_nan=False,
            ensure_ascii=False,
            indent="\t",
            sort_keys=True,
        )
        + "\n"
    )


def _float(value: Any) -> float | None:
    return None if value is None else float(value)


def _stats(obj: Mapping[str, Any]) -> Stats:
    return Stats(**{key: _cents(value) for key, value in obj.items()})


def loads_report(text: str, source: str = "<report>") -> PropagationReport:
    """
    Deserialize a report written by `dumps_report`.
    """
    try:
        obj = loads(text, parse_float=Decimal)
        if obj["format"] != REPORT_FORMAT:
            raise ValidationError(f"{source}: unknown report format {obj['format']!r}")
        weighting = obj["weighting"]
        return PropagationReport(
            format=obj["format"],
            version=obj["version"],
            config_hash=obj["config_hash"],
            seed=obj["seed"],
            samples=obj["samples"],
            overshoot=float(obj["overshoot"]),
            mixture=obj["mixture"],
            rank_correlation=float(obj["rank_correlation"]),
            scenario_provenance=obj["scenario_provenance"],
            scenario_weights=tuple(
                (scenario, float(weight)) for scenario, weight in obj["scenario_weights"]
            ),
            weighting=None
            if weighting is None
            else WeightingRecord(
                mode=weighting["mode"],
                cutoff=_float(weighting["cutoff"]),
                experts=tuple(
                    ExpertRecord(
                        expert=expert["expert"],
                        calibration=_float(expert["calibration"]),
                        information=_float(expert["information"]),
                        raw_weight=float(expert["raw_weight"]),
                        norm_weight=float(expert["norm_weight"]),
                    )
                    for expert in weighting["experts"]
                ),
                calibration=_float(weighting["calibration"]),
                information=_float(weighting["information"]),
                candidates=tuple(
                    (float(cutoff), float(calibration), float(information))
                    for cutoff, calibration, information in weighting["candidates"]
                ),
            ),
            categories=tuple(
                CategoryRecord(
                    category=category["category"],
                    scenario=category["scenario"],
                    q05=_cents(category["q05"]),
                    q50=_cents(category["q50"]),
                    q95=_cents(category["q95"]),
                    mean=_cents(category["mean"]),
                )
                for category in obj["categories"]
            ),
            baskets=tuple(
                BasketRecord(
                    basket=basket["basket"],
                    analysis=basket["analysis"],
                    scenario=basket["scenario"],
                    floor=_float(basket["floor"]),
                    pins=tuple((category, float(p)) for category, p in basket["pins"]),
                    samples=basket["samples"],
                    baseline_cost=_cents(basket["baseline_cost"]),
                    baseline_date=basket["baseline_date"],
                    projected_cost=_cents(basket["projected_cost"]),
                    projected_sd=_cents(basket["projected_sd"]),
                    percent=_stats(basket["percent"]),
                    change=_stats(basket["change"]),
                    total=_stats(basket["total"]),
                )
                for basket in obj["baskets"]
            ),
            notes=tuple(obj["notes"]),
        )
    except ValidationFailure:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"Malformed report: {exc!r}", source=source, line=1) from exc


def _row(fp: SupportsWrite[str], *cells: object) -> None:
    fp.write(" | ".join(map(str, cells)))
    fp.write("\n")


def table(report: PropagationReport, fp: SupportsWrite[str]) -> None:
    """
    Write the tabular rendering of a report to `fp`.

    Refuses a report with nothing to tabulate.
    """
    if report.weighting is None and not report.categories:
        raise ValidationError("Report has no expert weights and no categories")

    fp.write(f"report {report.config_hash}\n")
    fp.write(
        f"seed {report.seed}, samples {report.samples}, overshoot {report.overshoot!r}, "
        f"mixture {report.mixture}, rank correlation {report.rank_correlation!r}\n"
    )

    weighting = report.weighting
    if weighting is not None:
        fp.write("\n")
        fp.write(
            f"Expert weights: {weighting.mode}"
            + ("" if weighting.cutoff is None else f", cutoff {weighting.cutoff!r}")
            + "\n"
        )
        _row(fp, "Expert", "Calibration", "Information", "Weight")
        for expert in weighting.experts:
            _row(
                fp,
                expert.expert,
                "-" if expert.calibration is None else repr(expert.calibration),
                "-" if expert.information is None else repr(expert.information),
                repr(expert.norm_weight),
            )
        if weighting.calibration is not None and weighting.information is not None:
            _row(
                fp,
                "Decision Maker",
                repr(weighting.calibration),
                repr(weighting.information),
                "-",
            )

    if report.categories:
        scenarios = sorted({record.scenario for record in report.categories})
        cells = {
            (record.category, record.scenario): record for record in report.categories
        }
        fp.write("\n")
        fp.write("Category percent change: median (5th, 95th percentile)\n")
        _row(fp, "Category", *scenarios)
        for category in dict.fromkeys(record.category for record in report.categories):
            _row(
                fp,
                category,
                *(str(cells.get((category, s), "-")) for s in scenarios),
            )
        if report.scenario_provenance is not None:
            _row(
                fp,
                f"Likelihood ({report.scenario_provenance})",
                *(repr(weight) for _, weight in report.scenario_weights),
            )

    if report.baskets:
        fp.write("\n")
        fp.write("Basket: median (5th, 95th percentile); mean, sd\n")
        _row(fp, "Basket", "Analysis", "Percent", "Change (GBP)", "Total (GBP)")
        for basket in report.baskets:
            _row(
                fp,
                f"{basket.basket} ({_plain(basket.baseline_cost)} at {basket.baseline_date})",
                basket.label,
                basket.percent,
                basket.change,
                basket.total,
            )

    for note in report.notes:
        fp.write(f"\nnote: {note}")
    if report.notes:
        fp.write("\n")


def table_s(report: PropagationReport) -> str:
    """
    Same as `table`, but returns a `str`.
    """
    with StringIO() as ret:
        table(report, ret)
        return ret.getvalue()


async def emit_report(
    report: PropagationReport,
    fp: SupportsWrite[str],
    *,
    output: Path | None = None,
    table_path: Path | None = None,
) -> None:
    """
    Write the structured report to `output` and the tabular one to `table_path`.

    Without either path, the tabular report goes to `fp`. Nothing is written if the
    report cannot be tabulated.
    """
    rendered = table_s(report)
    try:
        if output is not None:
            await output.write_text(dumps_report(report), encoding="utf-8")
        if table_path is not None:
            await table_path.write_text(rendered, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"Cannot write report: {exc}") from exc
    if output is None and table_path is None:
        fp.write(rendered)
