from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from decimal import Decimal
from fractions import Fraction
from math import floor
from tempfile import NamedTemporaryFile
from typing import Any
from typing import Callable
from typing import IO
from typing import Iterable
from typing import Sequence
from typing import TypeVar

import numpy as np
import yaml
from django.conf import settings

from asrkit.exceptions import ConfigError

T = TypeVar("T")
R = TypeVar("R")

DEFAULTS = {
    "DEFAULT_COSTS": (4, 3, 3),
    "DEFAULT_ORDER": 6,
    "DEFAULT_BIAS_WEIGHT": 0.9,
    "NN_MIX_WEIGHT": 0.5,
    "VOCAB_SIZE": 80000,
}


def get_setting(name: str) -> Any:
    """
    Package defaults, overridable through an ASRKIT dict in the django settings.

    >>> get_setting("DEFAULT_COSTS")
    (4, 3, 3)
    >>> get_setting("NN_MIX_WEIGHT")
    0.5
    >>> get_setting("nope")
    Traceback (most recent call last):
    ...
    KeyError: 'nope'
    """
    overrides = getattr(settings, "ASRKIT", None) or {}
    if name in overrides:
        return overrides[name]
    return DEFAULTS[name]


def round_half_away(value: Fraction) -> Decimal:
    """
    Round to one decimal, halves away from zero. Exact, since it works on fractions.

    >>> round_half_away(Fraction(65, 10))
    Decimal('6.5')
    >>> round_half_away(Fraction(5, 100))
    Decimal('0.1')
    >>> round_half_away(Fraction(-5, 100))
    Decimal('-0.1')
    >>> round_half_away(Fraction(4999, 100000))
    Decimal('0.0')
    """
    tenths = abs(value) * 10
    rounded = floor(tenths + Fraction(1, 2))
    if value < 0:
        rounded = -rounded
    return Decimal(rounded).scaleb(-1)


def display_rate(count: int, total: int) -> Decimal:
    """
    A percentage the way reports show it.

    >>> display_rate(32, 1000)
    Decimal('3.2')
    >>> display_rate(65, 1000)
    Decimal('6.5')
    >>> display_rate(1, 3)
    Decimal('33.3')
    >>> display_rate(0, 12)
    Decimal('0.0')
    """
    if total <= 0:
        raise ZeroDivisionError("Rate over zero items")
    return round_half_away(Fraction(100 * count, total))


def format_number(value: float) -> str:
    """
    Shortest text that reads back as the same float.

    >>> format_number(17.21)
    '17.21'
    >>> format_number(5)
    '5.0'
    """
    return repr(float(value))


def log10_mix(log_values: Sequence[float], weights: Sequence[float]) -> float:
    """
    log10(sum_i w_i * 10**l_i), without leaving the log domain for the large terms.

    >>> round(10 ** log10_mix([np.log10(0.2), np.log10(0.4)], [0.5, 0.5]), 12)
    0.3
    >>> log10_mix([-400.0, -400.0], [0.5, 0.5])
    -400.0
    >>> log10_mix([-3.0, -1.0], [1.0, 0.0])
    -3.0
    >>> log10_mix([-3.0], [0.0])
    -inf
    """
    logs = np.asarray(log_values, dtype=float)
    w = np.asarray(weights, dtype=float)
    mask = w > 0
    if not mask.any():
        return float("-inf")
    logs = logs[mask]
    w = w[mask]
    top = logs.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log10(np.dot(w, 10.0 ** (logs - top))))


def available_jobs() -> int:
    if hasattr(os, "sched_getaffinity"):
        return max(1, len(os.sched_getaffinity(0)))
    return os.cpu_count() or 1  # pragma: no cover


def fan_out(
    func: Callable[[T], R],
    items: Iterable[T],
    jobs: int = 1,
    chunksize: int | None = None,
) -> list[R]:
    """
    Map func over items, in order. Use worker processes when jobs > 1.
    func must be picklable (module level function or a partial of one).

    >>> fan_out(abs, [-1, 2, -3])
    [1, 2, 3]
    """
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [func(x) for x in items]
    if chunksize is None:
        chunksize = max(1, len(items) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(func, items, chunksize=chunksize))


class StagedOutputs:
    """
    Several output files that appear together or not at all. Each file is
    written to a temporary name next to its target, and all of them are moved
    in place when the block exits cleanly.

    >>> import tempfile
    >>> with tempfile.TemporaryDirectory() as tmp:
    ...     try:
    ...         with StagedOutputs() as outputs:
    ...             with outputs.open(os.path.join(tmp, "a.txt")) as stream:
    ...                 _ = stream.write("a")
    ...             raise ValueError("later step failed")
    ...     except ValueError:
    ...         pass
    ...     os.listdir(tmp)
    []
    """

    def __init__(self, encoding: str = "utf-8"):
        self.encoding = encoding
        self.staged: list[tuple[IO[str], str]] = []

    def open(self, path: str | os.PathLike) -> IO[str]:
        path = os.fspath(path)
        tmp = NamedTemporaryFile(
            "w",
            encoding=self.encoding,
            dir=os.path.dirname(os.path.abspath(path)),
            prefix=f".{os.path.basename(path)}.",
            suffix=".tmp",
            delete=False,
        )
        self.staged.append((tmp, path))
        return tmp

    def __enter__(self) -> StagedOutputs:
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            for tmp, _ in self.staged:
                tmp.close()
            if exc_type is None:
                for tmp, path in self.staged:
                    os.replace(tmp.name, path)
        finally:
            for tmp, _ in self.staged:
                if os.path.exists(tmp.name):
                    os.unlink(tmp.name)
        return False


@contextmanager
def atomic_write(path: str | os.PathLike, encoding: str = "utf-8"):
    """
    Write to a temporary file next to path and move it in place when done.
    Nothing is left behind if the block raises.
    """
    with StagedOutputs(encoding) as outputs:
        yield outputs.open(path)


def parse_key_value_lines(lines: Iterable[str]) -> dict[str, str]:
    """
    >>> parse_key_value_lines(["# comment", "", "lm-weight = 12", "jobs=1"])
    {'lm_weight': '12', 'jobs': '1'}
    >>> parse_key_value_lines(["no equals sign"])
    Traceback (most recent call last):
    ...
    asrkit.exceptions.ConfigError: line 1: expected key=value
    """
    result = {}
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key=value")
        key, value = line.split("=", 1)
        result[key.strip().replace("-", "_")] = value.strip()
    return result


def load_config_file(filename: str) -> dict[str, Any]:
    with open(filename, "r", encoding="utf-8") as stream:
        if filename.endswith(".yaml") or filename.endswith(".yml"):
            try:
                data = yaml.safe_load(stream) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{filename}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"{filename} must contain a mapping")
            return {str(k).replace("-", "_"): v for k, v in data.items()}
        return parse_key_value_lines(stream)


def coerce_option(value: Any, default: Any) -> Any:
    """
    Convert a config value to the type of the option default.

    >>> coerce_option("0.5", 1.0)
    0.5
    >>> coerce_option("yes", False)
    True
    >>> coerce_option("3", 1)
    3
    >>> coerce_option("maybe", False)
    Traceback (most recent call last):
    ...
    asrkit.exceptions.ConfigError: Can't read 'maybe' as a boolean
    """
    if not isinstance(value, str) or default is None or isinstance(default, str):
        return value
    if isinstance(default, bool):
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"Can't read {value!r} as a boolean")
    try:
        return type(default)(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Can't read {value!r} as {type(default).__name__}") from exc
