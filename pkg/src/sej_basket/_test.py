from multiprocessing import cpu_count, dummy
from os import chdir
from pathlib import Path
from sys import argv
from types import TracebackType
from typing import Iterable, Self, Type
from unittest.mock import patch

from unittest_parallel.main import main as test_main  # type: ignore

from . import PACKAGE_NAME

PARALLEL_PATTERNS = (
    "*.test_*[!_][!m][!p]",
    *(f"*.test_{'?' * length}" for length in range(3)),
)
"""
Tests run in parallel, that is every test not named `*_mp`.
"""
SERIAL_PATTERNS = ("*.test_*_mp",)
"""
Tests that start their own worker processes.
"""


class _NullContext:
    def __init__(self, wrapped: object) -> None:
        self.__dict__ |= wrapped.__dict__

    def __enter__(self) -> Self:
        return self

    def __exit__(
        self,
        exc_type: Type[BaseException] | None,
        exc_val: BaseException | None,
        exc_tb: TracebackType | None,
    ) -> None:
        pass


def _select(patterns: Iterable[str]) -> tuple[str, ...]:
    return tuple(val for pattern in patterns for val in ("-k", pattern))


def main() -> None:
    """
    Test this package with branch coverage. Extra arguments go to `unittest-parallel`.
    """
    cwd = Path(__file__).parent
    chdir(cwd.parent)
    common_options = (
        "--coverage-branch",
        "--level",
        "class",
        "--start-directory",
        PACKAGE_NAME,
        "--top-level-directory",
        (cwd / "../..").__fspath__(),
        *argv[1:],
    )

    test_main((*common_options, *_select(PARALLEL_PATTERNS)))

    # the runner's own pool becomes threads so `*_mp` tests can fork freely
    with (
        patch("unittest_parallel.main.multiprocessing", dummy),
        patch.multiple(
            dummy,
            create=True,
            Manager=lambda *args, **kwargs: _NullContext(dummy),  # type: ignore
            Pool=lambda *args, orig=dummy.Pool, **kwargs: orig(  # type: ignore
                *args,
                **{
                    key: val
                    for key, val in kwargs.items()  # type: ignore
                    if key in {"processes", "initializer", "initargs"}
                },
            ),
            cpu_count=cpu_count,
            get_context=lambda *args, **kwargs: dummy,  # type: ignore
        ),
    ):
        test_main((*common_options, "--jobs", str(1), *_select(SERIAL_PATTERNS)))


if __name__ == "__main__":
    main()
