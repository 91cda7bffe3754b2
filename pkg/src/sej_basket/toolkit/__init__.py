from csv import DictReader, Error, writer
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from hashlib import sha256
from io import StringIO
from json import dumps
from math import isfinite
from typing import Callable, Iterable, Literal, Mapping, Sequence, TypeVar

from anyio import Path

from .._util import ValidationFailure
from ..classical import CalibrationItem
from ..elicitation import DEFAULT_OVERSHOOT, DomainError, ElicitedQuantiles
from ..propagation import BasketDefinition, SeasonalHistory
from ..propagation.monte_carlo import DEFAULT_SAMPLES

_T = TypeVar("_T")

CENT = Decimal("0.01")
"""
Currency resolution at the input and output boundary.
"""
ITEM_SEPARATOR = "/"
"""
Separates the category from the scenario in a target item id.
"""
MANIFEST_PARTS = ("judgements", "baskets", "calibration", "history", "scenario_weights")
"""
Input parts a manifest can name. Only the first two are required.
"""

Panel = dict[str, dict[str, ElicitedQuantiles]]
"""
Elicited quantiles by item id, then by expert id.
"""


class ConfigError(ValidationFailure):
    """
    Run configuration is invalid.
    """

    __slots__ = ()


class ParseError(ValidationFailure):
    """
    An input file is malformed. The message carries the file, line and field.
    """

    __slots__ = ("source", "line", "column")

    def __init__(
        self, message: str, *, source: str, line: int, column: str | None = None
    ) -> None:
        locus = f"{source}:{line}" + ("" if column is None else f" [{column}]")
        super().__init__(f"{locus}: {message}")
        self.source = source
        self.line = line
        self.column = column


class ValidationError(ValidationFailure):
    """
    Well-formed inputs are inconsistent with one another.
    """

    __slots__ = ()


class IoError(OSError):
    """
    An output could not be written.
    """

    __slots__ = ()


@dataclass(frozen=True, kw_only=True, slots=True)
class Manifest:
    """
    Locations of the input files of one run.
    """

    judgements: Path
    baskets: Path
    calibration: Path | None = None
    history: Path | None = None
    scenario_weights: Path | None = None

    def parts(self) -> dict[str, Path]:
        """
        Present parts by name.
        """
        return {
            part: path
            for part in MANIFEST_PARTS
            if (path := getattr(self, part)) is not None
        }


@dataclass(frozen=True, kw_only=True, slots=True)
class RunConfig:
    """
    Everything that determines a run's numbers, plus where to write them.
    """

    manifest: Path
    """
    Input manifest.
    """
    seed: int = 20201231
    """
    Root seed.
    """
    samples: int = DEFAULT_SAMPLES
    """
    Monte Carlo sample count.
    """
    overshoot: float = DEFAULT_OVERSHOOT
    """
    Intrinsic range overshoot.
    """
    cutoff: float | None = None
    """
    Fixed calibration cutoff, or `None` to optimize it.
    """
    scenario_weights: Literal["elicited", "equal"] = "equal"
    """
    Where scenario likelihood weights come from.
    """
    mixture: Literal["category", "joint"] = "category"
    """
    How scenarios are mixed when propagating the mixture.
    """
    rank_correlation: float = 0.0
    """
    Exchangeable Spearman rank correlation between categories.
    """
    tails: tuple[tuple[str, float], ...] = ()
    """
    Conditional-tail what-ifs as `(scenario, floor)`.
    """
    pins: tuple[tuple[str, tuple[tuple[str, float], ...]], ...] = ()
    """
    Pinned what-ifs as `(scenario, ((category, percentile), ...))`.
    """
    workers: int = field(default=1, compare=False)
    """
    Worker processes. Never affects results.
    """
    output: Path | None = field(default=None, compare=False)
    """
    Structured report destination.
    """
    table: Path | None = field(default=None, compare=False)
    """
    Tabular report destination.
    """

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"Seed must be a 64-bit unsigned integer: {self.seed}")
        if self.samples < 1:
            raise ConfigError(f"Sample count must be positive: {self.samples}")
        if not (isfinite(self.overshoot) and self.overshoot > 0):
            raise ConfigError(
                "Overshoot must be positive, or the extreme quantiles of an item "
                f"land on its range edges: {self.overshoot}"
            )
        if self.cutoff is not None and not 0 <= self.cutoff <= 1:
            raise ConfigError(f"Cutoff must lie in [0, 1]: {self.cutoff}")
        if self.scenario_weights not in ("elicited", "equal"):
            raise ConfigError(f"Unknown scenario weights: {self.scenario_weights}")
        if self.mixture not in ("category", "joint"):
            raise ConfigError(f"Unknown mixture mode: {self.mixture}")
        if not -1 < self.rank_correlation < 1:
            raise ConfigError(
                f"Rank correlation must lie in (-1, 1): {self.rank_correlation}"
            )
        for scenario, floor in self.tails:
            if not 0 <= floor < 1:
                raise ConfigError(f"Tail floor must lie in [0, 1): {scenario}:{floor}")
        for scenario, pins in self.pins:
            if not pins:
                raise ConfigError(f"Pinned what-if has no pins: {scenario}")
            for category, p in pins:
                if not 0 <= p <= 1:
                    raise ConfigError(
                        f"Pin percentile must lie in [0, 1]: {scenario}:{category}={p}"
                    )
        if self.workers < 1:
            raise ConfigError(f"Worker count must be positive: {self.workers}")

    @property
    def cutoff_mode(self) -> Literal["optimized", "fixed"]:
        return "optimized" if self.cutoff is None else "fixed"

    def canonical(self) -> dict[str, object]:
        """
        Result-determining fields as JSON-compatible values.
        """
        return {
            "seed": self.seed,
            "samples": self.samples,
            "overshoot": self.overshoot,
            "cutoff": self.cutoff,
            "scenario_weights": self.scenario_weights,
            "mixture": self.mixture,
            "rank_correlation": self.rank_correlation,
            "tails": [list(tail) for tail in self.tails],
            "pins": [
                [scenario, [list(pin) for pin in pins]] for scenario, pins in self.pins
            ],
        }

    def digest(self, inputs: Mapping[str, bytes]) -> str:
        """
        SHA-256 over the canonical configuration and the input bytes by part name.

        Output locations and the worker count are excluded, so they never change it.
        """
        hasher = sha256()
        hasher.update(
            dumps(
                self.canonical(), sort_keys=True, separators=(",", ":"), allow_nan=False
            ).encode("utf-8")
        )
        for part in sorted(inputs):
            hasher.update(b"\0" + part.encode("utf-8") + b"\0")
            hasher.update(sha256(inputs[part]).digest())
        return hasher.hexdigest()


def split_item(item: str) -> tuple[str, str]:
    """
    Split a target item id into `(category, scenario)`.

    The scenario follows the last separator, so categories may contain it.
    """
    category, sep, scenario = item.rpartition(ITEM_SEPARATOR)
    if not (sep and category and scenario):
        raise ValidationError(f"Item id must be CATEGORY{ITEM_SEPARATOR}SCENARIO: {item}")
    return category, scenario


def _rows(
    text: str, source: str, columns: Sequence[str]
) -> Iterable[tuple[int, dict[str, str]]]:
    reader = DictReader(StringIO(text, newline=""), strict=True)
    try:
        header = reader.fieldnames
        if header is None:
            raise ParseError("Empty file", source=source, line=1)
        missing = [column for column in columns if column not in header]
        if missing:
            raise ParseError(f"Missing columns: {missing}", source=source, line=1)
        for row in reader:
            if None in row or any(row[column] is None for column in columns):
                raise ParseError(
                    f"Expected {len(header)} fields",
                    source=source,
                    line=reader.line_num,
                )
            yield reader.line_num, {column: row[column].strip() for column in columns}
    except Error as exc:
        raise ParseError(str(exc), source=source, line=reader.line_num) from exc


def _field(
    row: Mapping[str, str],
    column: str,
    convert: Callable[[str], _T],
    *,
    source: str,
    line: int,
) -> _T:
    value = row[column]
    if not value:
        raise ParseError("Empty field", source=source, line=line, column=column)
    try:
        return convert(value)
    except (ValueError, InvalidOperation) as exc:
        raise ParseError(
            f"Invalid value {value!r}", source=source, line=line, column=column
        ) from exc


def _finite(value: str) -> float:
    ret = float(value)
    if not isfinite(ret):
        raise ValueError(value)
    return ret


def _money(value: str) -> Decimal:
    ret = Decimal(value)
    if not ret.is_finite():
        raise ValueError(value)
    return ret.quantize(CENT, rounding=ROUND_HALF_EVEN)


def _name(value: str) -> str:
    return value


def parse_manifest(text: str, source: str, base: Path) -> Manifest:
    """
    Parse a `part,path` manifest. Relative paths resolve against `base`.
    """
    paths = dict[str, Path]()
    for line, row in _rows(text, source, ("part", "path")):
        part = _field(row, "part", _name, source=source, line=line)
        if part not in MANIFEST_PARTS:
            raise ParseError(
                f"Unknown part {part!r}", source=source, line=line, column="part"
            )
        if part in paths:
            raise ParseError(
                f"Duplicate part {part!r}", source=source, line=line, column="part"
            )
        paths[part] = base / _field(row, "path", Path, source=source, line=line)
    for part in MANIFEST_PARTS[:2]:
        if part not in paths:
            raise ValidationError(f"{source}: manifest lacks the {part} part")
    return Manifest(**paths)


def _quantiles(
    row: Mapping[str, str], *, source: str, line: int
) -> ElicitedQuantiles:
    values = {
        column: _field(row, column, _finite, source=source, line=line)
        for column in ("q05", "q50", "q95")
    }
    try:
        return ElicitedQuantiles(**values)
    except ValidationFailure as exc:
        raise ValidationError(
            f"{source}:{line}: expert {row['expert']}, item {row['item']}: {exc}"
        ) from exc


def parse_judgements(text: str, source: str) -> Panel:
    """
    Parse `expert,item,q05,q50,q95` rows of target items `CATEGORY/SCENARIO`.
    """
    ret = Panel()
    for line, row in _rows(text, source, ("expert", "item", "q05", "q50", "q95")):
        expert = _field(row, "expert", _name, source=source, line=line)
        item = _field(row, "item", _name, source=source, line=line)
        split_item(item)
        judgements = ret.setdefault(item, {})
        if expert in judgements:
            raise ValidationError(
                f"{source}:{line}: duplicate judgement of item {item} by expert {expert}"
            )
        judgements[expert] = _quantiles(row, source=source, line=line)
    if not ret:
        raise ValidationError(f"{source}: no judgements")
    return ret


def format_judgements(panel: Mapping[str, Mapping[str, ElicitedQuantiles]]) -> str:
    """
    Write a panel in the format `parse_judgements` reads, sorted by item then expert.

    Floats are written in their shortest round-tripping form.
    """
    with StringIO(newline="") as buffer:
        out = writer(buffer, lineterminator="\n")
        out.writerow(("expert", "item", "q05", "q50", "q95"))
        for item in sorted(panel):
            for expert in sorted(panel[item]):
                out.writerow(
                    (expert, item, *map(repr, panel[item][expert].values))
                )
        return buffer.getvalue()


def parse_calibration(text: str, source: str) -> list[CalibrationItem]:
    """
    Parse `expert,item,q05,q50,q95,realization` rows, in order of first appearance.
    """
    realizations = dict[str, float]()
    judgements = dict[str, dict[str, ElicitedQuantiles]]()
    for line, row in _rows(
        text, source, ("expert", "item", "q05", "q50", "q95", "realization")
    ):
        expert = _field(row, "expert", _name, source=source, line=line)
        item = _field(row, "item", _name, source=source, line=line)
        realization = _field(row, "realization", _finite, source=source, line=line)
        if realizations.setdefault(item, realization) != realization:
            raise ValidationError(
                f"{source}:{line}: item {item} has conflicting realizations "
                f"{realizations[item]!r} and {realization!r}"
            )
        item_judgements = judgements.setdefault(item, {})
        if expert in item_judgements:
            raise ValidationError(
                f"{source}:{line}: duplicate judgement of item {item} by expert {expert}"
            )
        item_judgements[expert] = _quantiles(row, source=source, line=line)
    if not judgements:
        raise ValidationError(f"{source}: no calibration items")
    return [
        CalibrationItem(
            item_id=item,
            realization=realizations[item],
            judgements=item_judgements,
        )
        for item, item_judgements in judgements.items()
    ]


def parse_baskets(text: str, source: str) -> list[BasketDefinition]:
    """
    Parse `basket,record,key,value` rows.

    `category` records map a category id to its weight. `baseline` records set the `cost`
    and the `date` of the basket.
    """
    weights = dict[str, dict[str, float]]()
    baselines = dict[str, dict[str, str]]()
    for line, row in _rows(text, source, ("basket", "record", "key", "value")):
        basket = _field(row, "basket", _name, source=source, line=line)
        record = _field(row, "record", _name, source=source, line=line)
        key = _field(row, "key", _name, source=source, line=line)
        match record:
            case "category":
                entries = weights.setdefault(basket, {})
                if key in entries:
                    raise ValidationError(
                        f"{source}:{line}: basket {basket} repeats category {key}"
                    )
                entries[key] = _field(row, "value", _finite, source=source, line=line)
            case "baseline":
                if key not in ("cost", "date"):
                    raise ParseError(
                        f"Unknown baseline key {key!r}",
                        source=source,
                        line=line,
                        column="key",
                    )
                entries = baselines.setdefault(basket, {})
                if key in entries:
                    raise ValidationError(
                        f"{source}:{line}: basket {basket} repeats baseline {key}"
                    )
                if key == "cost":
                    _field(row, "value", _money, source=source, line=line)
                entries[key] = row["value"]
            case _:
                raise ParseError(
                    f"Unknown record {record!r}",
                    source=source,
                    line=line,
                    column="record",
                )
    ret = list[BasketDefinition]()
    for basket in dict.fromkeys((*weights, *baselines)):
        baseline = baselines.get(basket, {})
        if basket not in weights or baseline.keys() != {"cost", "date"}:
            raise ValidationError(
                f"{source}: basket {basket} needs categories, a baseline cost and a date"
            )
        try:
            ret.append(
                BasketDefinition(
                    name=basket,
                    weights=weights[basket],
                    baseline_cost=_money(baseline["cost"]),
                    baseline_date=baseline["date"],
                )
            )
        except ValidationFailure as exc:
            raise ValidationError(f"{source}: basket {basket}: {exc}") from exc
    if not ret:
        raise ValidationError(f"{source}: no baskets")
    return ret


def parse_history(text: str, source: str) -> SeasonalHistory:
    """
    Parse `year,change` rows of past seasonal percent changes.
    """
    observations = [
        (
            _field(row, "year", int, source=source, line=line),
            _field(row, "change", _finite, source=source, line=line),
        )
        for line, row in _rows(text, source, ("year", "change"))
    ]
    try:
        return SeasonalHistory(observations=tuple(observations))
    except DomainError as exc:
        raise ValidationError(f"{source}: {exc}") from exc


def parse_scenario_weights(text: str, source: str) -> dict[str, dict[str, float]]:
    """
    Parse `expert,scenario,weight` rows of elicited scenario likelihoods.
    """
    ret = dict[str, dict[str, float]]()
    for line, row in _rows(text, source, ("expert", "scenario", "weight")):
        expert = _field(row, "expert", _name, source=source, line=line)
        scenario = _field(row, "scenario", _name, source=source, line=line)
        likelihoods = ret.setdefault(expert, {})
        if scenario in likelihoods:
            raise ValidationError(
                f"{source}:{line}: expert {expert} repeats scenario {scenario}"
            )
        likelihoods[scenario] = _field(row, "weight", _finite, source=source, line=line)
    if not ret:
        raise ValidationError(f"{source}: no scenario weights")
    return ret
