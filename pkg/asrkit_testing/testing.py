import doctest
from pathlib import Path

options = (
    doctest.NORMALIZE_WHITESPACE
    | doctest.ELLIPSIS
    | doctest.FAIL_FAST
    | doctest.IGNORE_EXCEPTION_DETAIL
)

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def fixture(name: str) -> str:
    return str(FIXTURES / name)
