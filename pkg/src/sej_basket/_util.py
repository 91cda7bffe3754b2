from hashlib import sha256
from inspect import isawaitable
from logging import Logger
from multiprocessing import get_context
from os import name
from types import TracebackType
from typing import Any, Awaitable, Callable, Protocol, Self, Type, TypeVar
from unittest import IsolatedAsyncioTestCase

from numpy.random import Generator, SeedSequence, default_rng
from tqdm.auto import tqdm

_AnyStr_contra = TypeVar("_AnyStr_contra", str, bytes, contravariant=True)
_T = TypeVar("_T")

DEFAULT_MULTIPROCESSING_CONTEXT = get_context("spawn" if name == "nt" else "fork")
"""
The default context for multiprocessing.

See the info and warnings on <https://docs.python.org/3/library/multiprocessing.html#contexts-and-start-methods>.
"""
STAGE_NOTE_PREFIX = "stage: "
"""
Prefix of the exception note naming the pipeline stage that raised.
"""


class ValidationFailure(ValueError):
    """
    Base of errors caused by invalid inputs. Maps to exit status 2.
    """

    __slots__ = ()


class NumericalFailure(ArithmeticError):
    """
    Base of errors caused by a numerical procedure having no valid result. Maps to exit status 4.
    """

    __slots__ = ()


class SupportsWrite(Protocol[_AnyStr_contra]):
    """
    Supports writing.
    """

    __slots__ = ()

    def write(self, s: _AnyStr_contra, /) -> object:
        """
        Write a string.
        """
        ...


def stream_key(name: str) -> int:
    """
    Stable 64-bit key of a name, for deriving random streams.

    Unlike `hash`, it does not depend on the interpreter session.
    """
    return int.from_bytes(sha256(name.encode("utf-8")).digest()[:8], "big")


def new_stream(seed: int, *keys: int | str) -> Generator:
    """
    Create an independent random stream for `seed` and a path of keys.

    Equal arguments always give equal streams. String keys are converted by `stream_key`.
    """
    if seed < 0:
        raise ValueError(f"Seed must be nonnegative: {seed}")
    return default_rng(
        SeedSequence(
            seed,
            spawn_key=tuple(
                stream_key(key) if isinstance(key, str) else key for key in keys
            ),
        )
    )


class StageStepper:
    """
    Execute the queued pipeline stages sequentially with a `tqdm` progress bar.

    Each stage is logged when it starts. Stages can be sync or async.
    """

    __slots__ = ("_args", "_kwargs", "_logger", "_steps")

    def __init__(self, logger: Logger, *args: Any, **kwargs: Any) -> None:
        """
        Initialize a stepper with no stages and `tqdm` arguments.
        """
        self._steps = list[tuple[str, Callable[[], object]]]()
        self._logger = logger
        self._args = args
        self._kwargs = kwargs

    def queue(self, stage: str, step: Callable[[], object]) -> None:
        """
        Queue a stage to be executed.
        """
        self._steps.append((stage, step))

    @property
    def stages(self) -> tuple[str, ...]:
        """
        Names of the queued stages, in order.
        """
        return tuple(stage for stage, _ in self._steps)

    async def __aenter__(self) -> Self:
        """
        Noop. For making this class a context manager.
        """
        return self

    async def __aexit__(
        self,
        exc_type: Type[BaseException] | None,
        exc_val: BaseException | None,
        exc_tb: TracebackType | None,
    ) -> None:
        """
        Execute the queued stages, unless the body raised.
        """
        if exc_type is not None:
            return
        for stage, step in tqdm(self._steps, *self._args, **self._kwargs):
            self._logger.info("stage: %s", stage)
            try:
                await wrap_async(step())
            except Exception as exc:
                exc.add_note(f"{STAGE_NOTE_PREFIX}{stage}")
                raise


class _AsyncTestCase_FakeContextVars:
    def run(self, func: Callable[..., _T], *args: object, **kwargs: object) -> _T:
        return func(*args, **kwargs)


class AsyncTestCase(IsolatedAsyncioTestCase):
    """
    `IsolatedAsyncioTestCase` that is compatible with `unittest-parallel`.
    """

    __slots__ = ("_runner",)

    # @override
    def __init__(
        self, methodName: str = "runTest", *args: object, **kwargs: object
    ) -> None:
        """
        Initialize `AsyncTestCase`.
        """
        ret = super().__init__(methodName, *args, **kwargs)
        self._asyncioTestContext = _AsyncTestCase_FakeContextVars()
        return ret


async def wrap_async(value: Awaitable[_T] | _T) -> _T:
    """
    Unify async and sync values into async ones.
    """
    if isawaitable(value):
        return await value
    return value  # type: ignore
