from argparse import ArgumentParser, ArgumentTypeError, Namespace
from functools import wraps
from logging import INFO, basicConfig, getLogger
from sys import stdout
from typing import Callable, Literal, Mapping, Sequence, TypedDict

from anyio import Path
from tqdm.contrib.logging import logging_redirect_tqdm

from .. import VERSION
from .._util import StageStepper, SupportsWrite
from ..classical import (
    CalibrationItem,
    CutoffResult,
    build_decision_maker,
    equal_weights,
    evaluate_cutoff,
    optimize_cutoff,
    panel_of,
)
from ..elicitation import PiecewiseDistribution
from ..propagation import (
    SEASON_START_MONTH,
    BaselineProjection,
    BasketDefinition,
    ScenarioSet,
    SeasonalHistory,
    mix_scenarios,
    pool_scenario_weights,
    project_baseline,
)
from ..propagation.monte_carlo import (
    SamplingOptions,
    conditional_tail,
    pinned_whatif,
    propagate_basket,
    propagate_joint,
)
from . import (
    ConfigError,
    Manifest,
    Panel,
    ParseError,
    RunConfig,
    ValidationError,
    parse_baskets,
    parse_calibration,
    parse_history,
    parse_judgements,
    parse_manifest,
    parse_scenario_weights,
    split_item,
)
from .report import (
    PIN_INTERPRETATION,
    BasketRecord,
    CategoryRecord,
    PropagationReport,
    WeightingRecord,
    emit_report,
    loads_report,
)

_PROGRAM = __package__ or __name__
_MIXTURE = "mixture"

_LOGGER = getLogger(_PROGRAM)

Stage = Literal["load", "weigh", "aggregate", "propagate", "whatif"]

SUBCOMMAND_STAGES: Mapping[str, tuple[Stage, ...]] = {
    "score": ("load", "weigh"),
    "aggregate": ("load", "weigh", "aggregate"),
    "propagate": ("load", "weigh", "aggregate", "propagate"),
    "whatif": ("load", "weigh", "aggregate", "whatif"),
}
"""
Pipeline stages run by each subcommand, in order.
"""
ALL_STAGES: tuple[Stage, ...] = ("load", "weigh", "aggregate", "propagate", "whatif")


def _decode(data: bytes, source: str) -> str:
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ParseError(f"Not UTF-8: {exc.reason}", source=source, line=1) from exc


class _Run:
    """
    State shared by the stages of one pipeline run.
    """

    __slots__ = (
        "baskets",
        "calibration",
        "categories",
        "config",
        "elicited",
        "history",
        "inputs",
        "panel",
        "records",
        "scenarios",
        "show_progress",
        "weighting",
        "weights",
    )

    def __init__(self, config: RunConfig, *, show_progress: bool) -> None:
        self.config = config
        self.show_progress = show_progress
        self.inputs = dict[str, bytes]()
        self.panel = Panel()
        self.calibration = list[CalibrationItem]()
        self.baskets = list[BasketDefinition]()
        self.history: SeasonalHistory | None = None
        self.elicited: dict[str, dict[str, float]] | None = None
        self.weighting: WeightingRecord | None = None
        self.weights = dict[str, float]()
        self.scenarios: ScenarioSet | None = None
        self.categories = list[CategoryRecord]()
        self.records = list[BasketRecord]()

    async def load(self) -> None:
        manifest_path = self.config.manifest
        source = str(manifest_path)
        data = await manifest_path.read_bytes()
        self.inputs["manifest"] = data
        manifest = parse_manifest(_decode(data, source), source, manifest_path.parent)
        texts = dict[str, tuple[str, str]]()
        for part, path in manifest.parts().items():
            data = await path.read_bytes()
            self.inputs[part] = data
            texts[part] = (_decode(data, str(path)), str(path))
        self._parse(manifest, texts)

    def _parse(self, manifest: Manifest, texts: Mapping[str, tuple[str, str]]) -> None:
        self.panel = parse_judgements(*texts["judgements"])
        self.baskets = parse_baskets(*texts["baskets"])
        if manifest.calibration is not None:
            self.calibration = parse_calibration(*texts["calibration"])
        if manifest.history is not None:
            self.history = parse_history(*texts["history"])
            for basket in self.baskets:
                if basket.baseline_month != SEASON_START_MONTH:
                    raise ValidationError(
                        f"{texts['baskets'][1]}: basket {basket.name} is dated "
                        f"{basket.baseline_date}, but a seasonal history projects "
                        f"month {SEASON_START_MONTH:02d} costs to December"
                    )
        if manifest.scenario_weights is not None:
            self.elicited = parse_scenario_weights(*texts["scenario_weights"])
        _LOGGER.info(
            "loaded %d target items, %d calibration items, %d baskets",
            len(self.panel),
            len(self.calibration),
            len(self.baskets),
        )

    def weigh(self) -> None:
        experts = sorted({expert for panel in self.panel.values() for expert in panel})
        config = self.config
        if not self.calibration:
            if config.cutoff is not None:
                _LOGGER.warning("no calibration items, ignoring cutoff %g", config.cutoff)
            self.weights = equal_weights(experts)
            self.weighting = WeightingRecord.equal(self.weights)
            return
        calibrated = panel_of(self.calibration)
        result: CutoffResult
        if config.cutoff is None:
            result = optimize_cutoff(
                self.calibration,
                calibrated,
                config.overshoot,
                show_progress=self.show_progress,
            )
        else:
            result = evaluate_cutoff(
                self.calibration, calibrated, config.cutoff, config.overshoot
            )
        uncalibrated = [expert for expert in experts if expert not in result.weights]
        if uncalibrated:
            _LOGGER.warning(
                "experts without calibration scores get weight 0: %s", uncalibrated
            )
        self.weights = result.weights | dict.fromkeys(uncalibrated, 0.0)
        self.weighting = WeightingRecord.of(
            result, config.cutoff_mode, dict.fromkeys(uncalibrated, 0.0)
        )

    def aggregate(self) -> None:
        dm = build_decision_maker(self.panel, self.weights, self.config.overshoot)
        distributions = dict[str, dict[str, PiecewiseDistribution]]()
        for item, d in dm.distributions.items():
            category, scenario = split_item(item)
            distributions.setdefault(scenario, {})[category] = d
            self.categories.append(CategoryRecord.of(category, scenario, d))
        if self.config.scenario_weights == "equal":
            self.scenarios = ScenarioSet.equal(distributions)
            return
        if self.elicited is None:
            raise ConfigError("Elicited scenario weights need a scenario_weights part")
        self.scenarios = ScenarioSet(
            distributions=distributions,
            weights=pool_scenario_weights(
                self.elicited, self.weights, tuple(sorted(distributions))
            ),
            provenance="elicited",
        )

    def _options(self) -> SamplingOptions:
        config = self.config
        return SamplingOptions(
            seed=config.seed,
            samples=config.samples,
            workers=config.workers,
            rank_correlation=config.rank_correlation,
            show_progress=self.show_progress,
        )

    def _baseline(self, basket: BasketDefinition) -> BaselineProjection:
        return project_baseline(float(basket.baseline_cost), self.history)

    def _distributions(self, scenario: str) -> Mapping[str, PiecewiseDistribution]:
        assert self.scenarios is not None
        if scenario == _MIXTURE:
            return {
                category: mix_scenarios(self.scenarios, category)
                for category in self.scenarios.categories
            }
        try:
            return self.scenarios.distributions[scenario]
        except KeyError:
            raise ValidationError(
                f"Unknown scenario {scenario!r}, expected one of "
                f"{[*self.scenarios.scenarios, _MIXTURE]}"
            ) from None

    def propagate(self) -> None:
        assert self.scenarios is not None
        options = self._options()
        for basket in self.baskets:
            baseline = self._baseline(basket)
            for scenario in self.scenarios.scenarios:
                self.records.append(
                    BasketRecord.of(
                        basket,
                        baseline,
                        propagate_basket(
                            basket, self._distributions(scenario), baseline, options
                        ),
                        analysis="scenario",
                        scenario=scenario,
                    )
                )
            result = (
                propagate_joint(basket, self.scenarios, baseline, options)
                if self.config.mixture == "joint"
                else propagate_basket(
                    basket, self._distributions(_MIXTURE), baseline, options
                )
            )
            self.records.append(
                BasketRecord.of(
                    basket, baseline, result, analysis="mixture", scenario=_MIXTURE
                )
            )

    def whatif(self) -> None:
        options = self._options()
        for basket in self.baskets:
            baseline = self._baseline(basket)
            for scenario, floor in self.config.tails:
                self.records.append(
                    BasketRecord.of(
                        basket,
                        baseline,
                        conditional_tail(
                            basket,
                            self._distributions(scenario),
                            baseline,
                            floor,
                            options,
                        ),
                        analysis="tail",
                        scenario=scenario,
                        floor=floor,
                    )
                )
            for scenario, pins in self.config.pins:
                self.records.append(
                    BasketRecord.of(
                        basket,
                        baseline,
                        pinned_whatif(
                            basket,
                            self._distributions(scenario),
                            baseline,
                            dict(pins),
                            options,
                        ),
                        analysis="pinned",
                        scenario=scenario,
                        pins=dict(pins),
                    )
                )

    def report(self) -> PropagationReport:
        config = self.config
        notes = list[str]()
        if self.weighting is not None and self.weighting.mode == "equal":
            notes.append("no calibration items; experts weighted equally")
        if any(record.analysis == "pinned" for record in self.records):
            notes.append(PIN_INTERPRETATION)
        if any(record.analysis == "mixture" for record in self.records):
            notes.append(f"scenario mixture drawn per {config.mixture}")
        return PropagationReport(
            version=VERSION,
            config_hash=config.digest(self.inputs),
            seed=config.seed,
            samples=config.samples,
            overshoot=config.overshoot,
            mixture=config.mixture,
            rank_correlation=config.rank_correlation,
            scenario_provenance=None
            if self.scenarios is None
            else self.scenarios.provenance,  # type: ignore
            scenario_weights=()
            if self.scenarios is None
            else tuple(sorted(self.scenarios.weights.items())),
            weighting=self.weighting,
            categories=tuple(self.categories),
            baskets=tuple(self.records),
            notes=tuple(notes),
        )


async def run_pipeline(
    config: RunConfig,
    stages: Sequence[Stage] = ALL_STAGES,
    *,
    show_progress: bool = False,
) -> PropagationReport:
    """
    Run pipeline `stages` in order and report what they computed.

    The report depends only on the configuration and the input bytes.
    """
    run = _Run(config, show_progress=show_progress)
    async with StageStepper(
        _LOGGER, disable=not show_progress, desc="pipeline", unit="stages"
    ) as stepper:
        for stage in stages:
            stepper.queue(stage, getattr(run, stage))
        _LOGGER.info("stages: %s", ", ".join(stepper.stages))
    return run.report()


async def main(
    config: RunConfig,
    *,
    stages: Sequence[Stage] = ALL_STAGES,
    show_progress: bool,
    fp: SupportsWrite[str] = stdout,
) -> None:
    """
    Main program.
    """

    basicConfig(level=INFO)
    with logging_redirect_tqdm():
        report = await run_pipeline(config, stages, show_progress=show_progress)
        await emit_report(report, fp, output=config.output, table_path=config.table)
        _LOGGER.info("ended")


async def rerender(
    report: Path,
    *,
    output: Path | None,
    table: Path | None,
    fp: SupportsWrite[str] = stdout,
) -> None:
    """
    Render a saved structured report again.
    """

    basicConfig(level=INFO)
    loaded = loads_report(
        _decode(await report.read_bytes(), str(report)), str(report)
    )
    await emit_report(loaded, fp, output=output, table_path=table)


class ParserOptionDefaults(TypedDict):
    """
    Typing for parser option defaults.
    """

    seed: int
    samples: int
    overshoot: float
    cutoff: float | None
    scenario_weights: Literal["elicited", "equal"]
    mixture: Literal["category", "joint"]
    rank_correlation: float
    workers: int
    output: Path | None
    table: Path | None
    show_progress: bool


_CONFIG_DEFAULTS = RunConfig(manifest=Path())
PARSER_OPTION_DEFAULTS = ParserOptionDefaults(
    seed=_CONFIG_DEFAULTS.seed,
    samples=_CONFIG_DEFAULTS.samples,
    overshoot=_CONFIG_DEFAULTS.overshoot,
    cutoff=_CONFIG_DEFAULTS.cutoff,
    scenario_weights=_CONFIG_DEFAULTS.scenario_weights,
    mixture=_CONFIG_DEFAULTS.mixture,
    rank_correlation=_CONFIG_DEFAULTS.rank_correlation,
    workers=_CONFIG_DEFAULTS.workers,
    output=None,
    table=None,
    show_progress=True,
)
"""
Default for parser options.
"""


def _probability(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ArgumentTypeError(f"not a number: {value!r}") from None


def parse_tail(value: str) -> tuple[str, float]:
    """
    Parse `SCENARIO:FLOOR`.
    """
    scenario, sep, floor = value.partition(":")
    if not (sep and scenario):
        raise ArgumentTypeError(f"expected SCENARIO:FLOOR: {value!r}")
    return scenario, _probability(floor)


def parse_pins(value: str) -> tuple[str, tuple[tuple[str, float], ...]]:
    """
    Parse `SCENARIO:CATEGORY=P[;CATEGORY=P...]`.
    """
    scenario, sep, rest = value.partition(":")
    if not (sep and scenario and rest):
        raise ArgumentTypeError(f"expected SCENARIO:CATEGORY=P[;CATEGORY=P...]: {value!r}")
    pins = dict[str, float]()
    for pin in rest.split(";"):
        category, sep, p = pin.rpartition("=")
        if not (sep and category):
            raise ArgumentTypeError(f"expected CATEGORY=P: {pin!r}")
        if category in pins:
            raise ArgumentTypeError(f"category pinned twice: {category!r}")
        pins[category] = _probability(p)
    return scenario, tuple(sorted(pins.items()))


def _outputs(parser: ArgumentParser) -> None:
    parser.add_argument(
        "-o",
        "--output",
        type=Path,
        default=PARSER_OPTION_DEFAULTS["output"],
        help="path to write the structured report; default not write",
    )
    parser.add_argument(
        "-t",
        "--table",
        type=Path,
        default=PARSER_OPTION_DEFAULTS["table"],
        help="path to write the tabular report; "
        "default standard output if no path is given",
    )


def _options(parser: ArgumentParser, stages: Sequence[Stage]) -> None:
    parser.add_argument(
        "manifest",
        type=Path,
        help="path to the input manifest",
    )
    _outputs(parser)
    parser.add_argument(
        "--overshoot",
        type=float,
        default=PARSER_OPTION_DEFAULTS["overshoot"],
        help="fraction of the pooled spread added to each side of an intrinsic range; "
        f"default {PARSER_OPTION_DEFAULTS['overshoot']}",
    )
    parser.add_argument(
        "-c",
        "--cutoff",
        type=float,
        default=PARSER_OPTION_DEFAULTS["cutoff"],
        help="fixed calibration cutoff in [0, 1]; default optimized",
    )
    if "aggregate" in stages:
        parser.add_argument(
            "-w",
            "--scenario-weights",
            choices=("elicited", "equal"),
            default=PARSER_OPTION_DEFAULTS["scenario_weights"],
            help="source of scenario likelihood weights; "
            f"default {PARSER_OPTION_DEFAULTS['scenario_weights']}",
        )
    if "propagate" in stages or "whatif" in stages:
        parser.add_argument(
            "-s",
            "--seed",
            type=int,
            default=PARSER_OPTION_DEFAULTS["seed"],
            help=f"root random seed; default {PARSER_OPTION_DEFAULTS['seed']}",
        )
        parser.add_argument(
            "-n",
            "--samples",
            type=int,
            default=PARSER_OPTION_DEFAULTS["samples"],
            help=f"Monte Carlo samples; default {PARSER_OPTION_DEFAULTS['samples']}",
        )
        parser.add_argument(
            "-r",
            "--rank-correlation",
            type=float,
            default=PARSER_OPTION_DEFAULTS["rank_correlation"],
            help="Spearman rank correlation between every pair of categories; "
            f"default {PARSER_OPTION_DEFAULTS['rank_correlation']}",
        )
        parser.add_argument(
            "-j",
            "--workers",
            type=int,
            default=PARSER_OPTION_DEFAULTS["workers"],
            help="number of processes, the results remain the same; "
            f"default {PARSER_OPTION_DEFAULTS['workers']}",
        )
    if "propagate" in stages:
        parser.add_argument(
            "-m",
            "--mixture",
            choices=("category", "joint"),
            default=PARSER_OPTION_DEFAULTS["mixture"],
            help="mix scenarios per category or draw one scenario per sample; "
            f"default {PARSER_OPTION_DEFAULTS['mixture']}",
        )
    if "whatif" in stages:
        parser.add_argument(
            "--tail",
            action="append",
            type=parse_tail,
            default=[],
            metavar="SCENARIO:FLOOR",
            help="condition every category on exceeding its FLOOR percentile, "
            f"SCENARIO may be '{_MIXTURE}'; repeatable",
        )
        parser.add_argument(
            "--pin",
            action="append",
            type=parse_pins,
            default=[],
            metavar="SCENARIO:CATEGORY=P[;CATEGORY=P...]",
            help="fix categories at percentile P and sample the others; repeatable",
        )


def _progress(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--no-progress",
        action=f"store_{str(not PARSER_OPTION_DEFAULTS['show_progress']).casefold()}",
        default=PARSER_OPTION_DEFAULTS["show_progress"],
        dest="show_progress",
        help="disable progress bar",
    )


def _config(args: Namespace) -> RunConfig:
    return RunConfig(
        manifest=args.manifest,
        seed=getattr(args, "seed", PARSER_OPTION_DEFAULTS["seed"]),
        samples=getattr(args, "samples", PARSER_OPTION_DEFAULTS["samples"]),
        overshoot=args.overshoot,
        cutoff=args.cutoff,
        scenario_weights=getattr(
            args, "scenario_weights", PARSER_OPTION_DEFAULTS["scenario_weights"]
        ),
        mixture=getattr(args, "mixture", PARSER_OPTION_DEFAULTS["mixture"]),
        rank_correlation=getattr(
            args, "rank_correlation", PARSER_OPTION_DEFAULTS["rank_correlation"]
        ),
        tails=tuple(getattr(args, "tail", ())),
        pins=tuple(getattr(args, "pin", ())),
        workers=getattr(args, "workers", PARSER_OPTION_DEFAULTS["workers"]),
        output=args.output,
        table=args.table,
    )


def parser(parent: Callable[..., ArgumentParser] | None = None) -> ArgumentParser:
    """
    Create an argument parser suitable for the main program. Pass a parser as `parent` to make this a subparser.
    """
    parser = (ArgumentParser if parent is None else parent)(
        prog=f"python -m {_PROGRAM}",
        description="weigh expert judgements of food price changes "
        "and propagate them to basket costs",
        add_help=True,
        allow_abbrev=False,
        exit_on_error=False,
    )
    parser.add_argument(
        "-v",
        "--version",
        action="version",
        version=f"{_PROGRAM} v{VERSION}",
        help="print version and exit",
    )
    subparsers = parser.add_subparsers(title="subcommands", required=True)

    for name, description in (
        ("score", "score experts and report their weights"),
        ("aggregate", "pool judgements into Decision Maker percentiles"),
        ("propagate", "propagate scenarios and their mixture to baskets"),
        ("whatif", "run conditional-tail and pinned what-ifs on baskets"),
    ):
        stages = SUBCOMMAND_STAGES[name]
        subparser = subparsers.add_parser(
            name,
            description=description,
            help=description,
            allow_abbrev=False,
            exit_on_error=False,
        )
        _options(subparser, stages)
        _progress(subparser)

        def bind(stages: tuple[Stage, ...]) -> Callable[[Namespace], object]:
            @wraps(main)
            async def invoke(args: Namespace):
                await main(
                    _config(args), stages=stages, show_progress=args.show_progress
                )

            return invoke

        subparser.set_defaults(invoke=bind(stages))

    description = "render a saved structured report again"
    render_parser = subparsers.add_parser(
        "report",
        description=description,
        help=description,
        allow_abbrev=False,
        exit_on_error=False,
    )
    render_parser.add_argument(
        "report",
        type=Path,
        help="path to a structured report",
    )
    _outputs(render_parser)

    @wraps(rerender)
    async def invoke_render(args: Namespace):
        await rerender(args.report, output=args.output, table=args.table)

    render_parser.set_defaults(invoke=invoke_render)
    return parser
