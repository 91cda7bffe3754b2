from argparse import ArgumentError
from asyncio import run
from json import dumps
from logging import getLogger
from sys import argv, exit, stderr

from .._util import STAGE_NOTE_PREFIX, NumericalFailure, ValidationFailure
from .main import parser

_LOGGER = getLogger(__package__ or __name__)

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _stage(exc: BaseException) -> str | None:
    for note in getattr(exc, "__notes__", ()):
        if note.startswith(STAGE_NOTE_PREFIX):
            return note.removeprefix(STAGE_NOTE_PREFIX)
    return None


def _fail(exc: BaseException, status: int) -> int:
    _LOGGER.debug("exiting with status %d", status, exc_info=exc)
    stderr.write(
        dumps(
            {
                "error": type(exc).__name__,
                "message": str(exc),
                "stage": _stage(exc),
            },
            ensure_ascii=False,
            sort_keys=True,
        )
    )
    stderr.write("\n")
    return status


def main() -> None:
    """
    Main program.

    Exits with 2 on invalid inputs, 3 on I/O failures and 4 on numerical failures,
    after writing one JSON error record to standard error.
    """
    try:
        entry = parser().parse_args(argv[1:])
        run(entry.invoke(entry))
    except (ArgumentError, ValidationFailure) as exc:
        exit(_fail(exc, EXIT_VALIDATION))
    except OSError as exc:
        exit(_fail(exc, EXIT_IO))
    except NumericalFailure as exc:
        exit(_fail(exc, EXIT_NUMERICAL))


if __name__ == "__main__":
    main()
