from __future__ import annotations

from typing import Iterable


class AsrkitBaseError(Exception): ...


class InputError(AsrkitBaseError, ValueError):
    """
    Something wrong with what the user gave us. Commands exit with 1.
    """


class InvariantViolation(AsrkitBaseError):
    """
    Internal invariant broken. Commands exit with 2.
    """


class ConfigError(InputError): ...


class CorpusFormatError(InputError):
    """
    Malformed line in one of the line-oriented formats.
    """

    def __init__(self, msg: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            msg = f"line {line_no}: {msg}"
        super().__init__(msg)


class OrderingError(CorpusFormatError):
    def __init__(self, stream: tuple[str, str], line_no: int, tbeg: float, prev: float):
        self.stream = stream
        super().__init__(
            f"stream {stream[0]}/{stream[1]} out of order: {tbeg} after {prev}",
            line_no,
        )


class SegmentRangeError(CorpusFormatError): ...


class DuplicateEntryError(InputError): ...


class RankContiguityError(InputError): ...


class JoinError(InputError):
    """
    A score keyed by (utterance, rank) that has no counterpart, or the other way around.
    """

    def __init__(self, utterance_id: str, rank: int, model: str | None = None):
        self.utterance_id = utterance_id
        self.rank = rank
        self.model = model
        what = f" for model {model}" if model else ""
        super().__init__(f"No match for ({utterance_id}, {rank}){what}")


class ArpaFormatError(CorpusFormatError): ...


class ArpaValueError(CorpusFormatError): ...


class OverlapError(InputError):
    def __init__(self, overlaps: Iterable[tuple[str, str]]):
        self.overlaps = list(overlaps)
        super().__init__(
            "Overlapping reference segments: "
            + "; ".join(f"{a} / {b}" for a, b in self.overlaps)
        )


class RulesConflictError(InputError): ...


class ReportError(InputError): ...


class NoScoredWordsError(ReportError): ...


class IncomparableReportsError(ReportError): ...


class OrderRangeError(InputError): ...


class EmptyCorpusError(InputError): ...


class DegenerateComponentError(InputError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(
            f"Component {index} assigns zero probability to every held-out event"
        )


class EmptyCaptionsError(InputError): ...


class AgreementError(InputError): ...


class ThresholdOrderError(InputError): ...


class EmptyNBestError(InputError): ...


class EmMonotonicityError(InvariantViolation):
    """
    EM lowered the held-out likelihood, which it must never do.
    """

    def __init__(self, iteration: int, before: float, after: float):
        self.iteration = iteration
        super().__init__(
            f"Held-out log-likelihood decreased at iteration {iteration}: {before} -> {after}"
        )
