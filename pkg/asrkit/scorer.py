"""
WER reports, confusion tables and system comparisons built from alignments.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from dataclasses import field
from decimal import Decimal
from fractions import Fraction
from typing import Mapping
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Union

from asrkit.aligner import DELETION
from asrkit.aligner import INSERTION
from asrkit.aligner import NIST_COSTS
from asrkit.aligner import SUBSTITUTION
from asrkit.aligner import AlignCosts
from asrkit.aligner import Alignment
from asrkit.aligner import OpCounts
from asrkit.aligner import align
from asrkit.aligner import map_ctm_to_segments
from asrkit.core import BaseJob
from asrkit.corpus_io import CtmEntry
from asrkit.corpus_io import StmSegment
from asrkit.exceptions import IncomparableReportsError
from asrkit.exceptions import InputError
from asrkit.exceptions import NoScoredWordsError
from asrkit.exceptions import ReportError
from asrkit.exceptions import RulesConflictError
from asrkit.textnorm import NormRules
from asrkit.textnorm import NormToken
from asrkit.textnorm import normalize
from asrkit.textnorm import normalize_words
from asrkit.utils import display_rate
from asrkit.utils import fan_out
from asrkit.utils import round_half_away

RATE_NAMES = ("sub_rate", "del_rate", "ins_rate", "wer")


@dataclass
class WerReport:
    """
    Error counts over scored reference words. Optional reference words that were
    deleted are kept apart and are not scored words.

    >>> report = WerReport(matches=946, subs=32, dels=22, inss=11)
    >>> report.n_ref
    1000
    >>> report.displayed()
    {'sub_rate': Decimal('3.2'), 'del_rate': Decimal('2.2'), 'ins_rate': Decimal('1.1'), 'wer': Decimal('6.5')}
    """

    matches: int = 0
    subs: int = 0
    dels: int = 0
    inss: int = 0
    optional_dels: int = 0
    n_unassigned: int = 0
    per_speaker: dict[str, WerReport] = field(default_factory=dict)
    per_show: dict[str, WerReport] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: OpCounts) -> WerReport:
        return cls(counts.matches, counts.subs, counts.dels, counts.inss, counts.optional_dels)

    @property
    def n_ref(self) -> int:
        return self.matches + self.subs + self.dels

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.inss

    def _rate(self, count: int) -> Fraction:
        if self.n_ref <= 0:
            raise NoScoredWordsError("No scored reference words, WER is undefined")
        return Fraction(100 * count, self.n_ref)

    @property
    def wer(self) -> Fraction:
        return self._rate(self.errors)

    @property
    def sub_rate(self) -> Fraction:
        return self._rate(self.subs)

    @property
    def del_rate(self) -> Fraction:
        return self._rate(self.dels)

    @property
    def ins_rate(self) -> Fraction:
        return self._rate(self.inss)

    def displayed(self) -> dict[str, Decimal]:
        if self.n_ref <= 0:
            raise NoScoredWordsError("No scored reference words, WER is undefined")
        return {
            "sub_rate": display_rate(self.subs, self.n_ref),
            "del_rate": display_rate(self.dels, self.n_ref),
            "ins_rate": display_rate(self.inss, self.n_ref),
            "wer": display_rate(self.errors, self.n_ref),
        }

    def counts_only(self) -> WerReport:
        return WerReport(
            self.matches, self.subs, self.dels, self.inss, self.optional_dels, self.n_unassigned
        )

    def __add__(self, other: WerReport) -> WerReport:
        """
        Merging is associative and commutative, sub-reports merge by key.
        """
        return WerReport(
            self.matches + other.matches,
            self.subs + other.subs,
            self.dels + other.dels,
            self.inss + other.inss,
            self.optional_dels + other.optional_dels,
            self.n_unassigned + other.n_unassigned,
            _merge_keyed(self.per_speaker, other.per_speaker),
            _merge_keyed(self.per_show, other.per_show),
        )

    def same_counts(self, other: WerReport) -> bool:
        return self.counts_only() == other.counts_only()


def _merge_keyed(a: Mapping[str, WerReport], b: Mapping[str, WerReport]) -> dict[str, WerReport]:
    result = dict(a)
    for key, report in b.items():
        result[key] = result[key] + report if key in result else report
    return result


@dataclass
class ConfusionTable:
    substitutions: Counter = field(default_factory=Counter)
    deletions: Counter = field(default_factory=Counter)
    insertions: Counter = field(default_factory=Counter)

    def add(self, alignment: Alignment):
        for op in alignment.ops:
            if op.kind == SUBSTITUTION:
                self.substitutions[(op.ref_word, op.hyp_word)] += 1
            elif op.kind == DELETION and not op.optional:
                self.deletions[op.ref_word] += 1
            elif op.kind == INSERTION:
                self.insertions[op.hyp_word] += 1

    def __add__(self, other: ConfusionTable) -> ConfusionTable:
        return ConfusionTable(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
        )

    def totals(self) -> tuple[int, int, int]:
        return (
            sum(self.substitutions.values()),
            sum(self.deletions.values()),
            sum(self.insertions.values()),
        )


class SegmentAlignment(NamedTuple):
    segment: StmSegment
    alignment: Alignment


class ScoreResult(NamedTuple):
    report: WerReport
    confusions: ConfusionTable
    alignments: list[SegmentAlignment]


def _align_task(args: tuple[list[NormToken], list[str], AlignCosts]) -> Alignment:
    ref, hyp, costs = args
    return align(ref, hyp, costs)


class Scorer(BaseJob):
    """
    Normalize both sides, map hypothesis words to reference segments by time,
    align segment by segment and merge the counts.
    """

    def __init__(
        self,
        stm: Sequence[StmSegment],
        ctm: Sequence[CtmEntry],
        rules: Optional[NormRules] = None,
        costs: AlignCosts = NIST_COSTS,
        jobs: int = 1,
        keep_alignments: bool = False,
        **kwargs,
    ):
        super().__init__(**kwargs)
        self.stm = stm
        self.ctm = ctm
        self.rules = rules or NormRules()
        self.costs = costs
        self.jobs = jobs
        self.keep_alignments = keep_alignments

    def __call__(self) -> ScoreResult:
        mapping = map_ctm_to_segments(self.ctm, self.stm)
        self.add_log(
            mod="scorer",
            act="map",
            msg=f"{len(self.ctm)} words, {len(mapping.unassigned)} unassigned",
        )
        scored = [(s, words) for s, words in zip(self.stm, mapping.per_segment) if s.scorable]
        tasks = [
            (
                normalize(segment.tokens, self.rules),
                normalize_words([e.word for e in words], self.rules),
                self.costs,
            )
            for segment, words in scored
        ]
        alignments = fan_out(_align_task, tasks, jobs=self.jobs)
        self.add_log(mod="scorer", act="align", msg=f"{len(alignments)} segments")

        total = WerReport(n_unassigned=len(mapping.unassigned))
        confusions = ConfusionTable()
        kept = []
        for (segment, _), alignment in zip(scored, alignments):
            segment_report = WerReport.from_counts(alignment.counts())
            total = total + WerReport(
                segment_report.matches,
                segment_report.subs,
                segment_report.dels,
                segment_report.inss,
                segment_report.optional_dels,
                per_speaker={segment.speaker_id: segment_report},
                per_show={segment.recording_id: segment_report},
            )
            confusions.add(alignment)
            if self.keep_alignments:
                kept.append(SegmentAlignment(segment, alignment))
        if total.n_ref == 0:
            raise NoScoredWordsError("No scored reference words, WER is undefined")
        self.add_log(mod="scorer", act="merge", msg=f"N={total.n_ref} errors={total.errors}")
        return ScoreResult(total, confusions, kept)


def score(
    stm: Sequence[StmSegment],
    ctm: Sequence[CtmEntry],
    rules: Optional[NormRules] = None,
    costs: AlignCosts = NIST_COSTS,
    jobs: int = 1,
) -> tuple[WerReport, ConfusionTable]:
    result = Scorer(stm, ctm, rules, costs, jobs=jobs)()
    return result.report, result.confusions


class RankedConfusions(NamedTuple):
    substitutions: list[tuple[int, str, str]]
    deletions: list[tuple[int, str]]
    insertions: list[tuple[int, str]]


def ranked_confusions(table: ConfusionTable, k: int) -> RankedConfusions:
    """
    Descending by count, ties by (ref, hyp) or by word.
    """
    if k < 1:
        raise InputError(f"k must be at least 1, got {k}")
    subs = sorted(table.substitutions.items(), key=lambda item: (-item[1], item[0]))[:k]
    dels = sorted(table.deletions.items(), key=lambda item: (-item[1], item[0]))[:k]
    inss = sorted(table.insertions.items(), key=lambda item: (-item[1], item[0]))[:k]
    return RankedConfusions(
        [(count, ref, hyp) for (ref, hyp), count in subs],
        [(count, word) for word, count in dels],
        [(count, word) for word, count in inss],
    )


class TopErrors(NamedTuple):
    substitutions: list[str]
    deletions: list[str]
    insertions: list[str]


def top_errors(table: ConfusionTable, k: int) -> TopErrors:
    """
    >>> table = ConfusionTable(Counter({("the", "a"): 21, ("and", "in"): 16}))
    >>> top_errors(table, 10).substitutions
    ['21: the / a', '16: and / in']
    >>> top_errors(ConfusionTable(), 5)
    TopErrors(substitutions=[], deletions=[], insertions=[])
    """
    ranked = ranked_confusions(table, k)
    return TopErrors(
        [f"{count}: {ref} / {hyp}" for count, ref, hyp in ranked.substitutions],
        [f"{count}: {word}" for count, word in ranked.deletions],
        [f"{count}: {word}" for count, word in ranked.insertions],
    )


def top_errors_side_by_side(
    tables: Mapping[str, ConfusionTable], k: int, kind: str = "substitutions"
) -> list[list[str]]:
    """
    One row per rank, one column per system. Shorter lists pad with "".

    >>> side = top_errors_side_by_side(
    ...     {"human": ConfusionTable(deletions=Counter({"and": 3})), "asr": ConfusionTable()},
    ...     2,
    ...     "deletions",
    ... )
    >>> side
    [['3: and', '']]
    """
    columns = [getattr(top_errors(t, k), kind) for t in tables.values()]
    depth = max((len(c) for c in columns), default=0)
    return [[c[i] if i < len(c) else "" for c in columns] for i in range(depth)]


ERROR_KINDS = ("substitutions", "deletions", "insertions")


class ErrorOverlap(NamedTuple):
    kind: str
    # in the first system's rank order, substitutions as "ref / hyp"
    shared: list[str]
    share_a: Fraction
    share_b: Fraction

    def displayed(self) -> tuple[Decimal, Decimal]:
        return (
            display_rate(self.share_a.numerator, self.share_a.denominator),
            display_rate(self.share_b.numerator, self.share_b.denominator),
        )


def _error_counter(table: ConfusionTable, kind: str) -> Counter:
    if kind not in ERROR_KINDS:
        raise InputError(f"Unknown error kind {kind!r}, expected one of {', '.join(ERROR_KINDS)}")
    counter = getattr(table, kind)
    if kind == "substitutions":
        return Counter({f"{ref} / {hyp}": n for (ref, hyp), n in counter.items()})
    return counter


def error_overlap(a: ConfusionTable, b: ConfusionTable, kind: str, k: int = 10) -> ErrorOverlap:
    """
    The items both systems have in their top k for one error kind, and the
    share of each system's errors of that kind those items account for.

    >>> a = ConfusionTable(deletions=Counter({"and": 6, "the": 3, "uh": 1}))
    >>> b = ConfusionTable(deletions=Counter({"the": 4, "a": 4}))
    >>> overlap = error_overlap(a, b, "deletions", 2)
    >>> overlap.shared, overlap.share_a, overlap.share_b
    (['the'], Fraction(3, 10), Fraction(1, 2))
    """
    if k < 1:
        raise InputError(f"k must be at least 1, got {k}")
    counts_a = _error_counter(a, kind)
    counts_b = _error_counter(b, kind)

    def top(counts: Counter) -> list[str]:
        return [item for item, _ in sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:k]]

    in_b = set(top(counts_b))
    shared = [item for item in top(counts_a) if item in in_b]

    def share(counts: Counter) -> Fraction:
        total = sum(counts.values())
        return Fraction(sum(counts[item] for item in shared), total) if total else Fraction(0)

    return ErrorOverlap(kind, shared, share(counts_a), share(counts_b))


def error_breakdown(reports: Mapping[str, WerReport]) -> dict[str, dict[str, Decimal]]:
    """
    Sub / Del / Ins / All rates, one column per system.

    >>> error_breakdown({"asr": WerReport(matches=946, subs=32, dels=22, inss=11)})["All"]
    {'asr': Decimal('6.5')}
    """
    rows = {"Sub": "sub_rate", "Del": "del_rate", "Ins": "ins_rate", "All": "wer"}
    displayed = {name: report.displayed() for name, report in reports.items()}
    return {
        label: {name: values[key] for name, values in displayed.items()}
        for label, key in rows.items()
    }


@dataclass
class Comparison:
    test_sets: list[str]
    wers: dict[str, dict[str, Decimal]]
    best: dict[str, set[str]]

    def rows(self) -> list[list]:
        result = []
        for system, values in self.wers.items():
            row: list = [system]
            for test_set in self.test_sets:
                mark = "*" if system in self.best[test_set] else ""
                row.append(f"{values[test_set]}{mark}")
            result.append(row)
        return result


def compare_systems(
    reports: Mapping[str, Union[WerReport, Mapping[str, WerReport]]],
) -> Comparison:
    """
    Rows are systems, columns test sets. The lowest WER per column is flagged,
    ties flag every system sharing it.

    >>> def mk(errors):
    ...     return WerReport(matches=1000 - errors, subs=errors)
    >>> cmp = compare_systems({"t1": mk(44), "t2": mk(44), "t3": mk(36)})
    >>> cmp.best
    {'wer': {'t3'}}
    >>> cmp.rows()
    [['t1', '4.4'], ['t2', '4.4'], ['t3', '3.6*']]
    """
    if len(reports) < 2:
        raise ReportError("Comparing needs at least 2 systems")
    table = {
        system: value if isinstance(value, Mapping) else {"wer": value}
        for system, value in reports.items()
    }
    test_sets = list(next(iter(table.values())))
    for system, by_set in table.items():
        if set(by_set) != set(test_sets):
            raise IncomparableReportsError(
                f"{system} has test sets {sorted(by_set)}, expected {sorted(test_sets)}"
            )
    best: dict[str, set[str]] = {}
    for test_set in test_sets:
        n_refs = {by_set[test_set].n_ref for by_set in table.values()}
        if len(n_refs) != 1:
            raise IncomparableReportsError(
                f"Reports on {test_set} differ in reference size: {sorted(n_refs)}"
            )
        wers = {system: by_set[test_set].wer for system, by_set in table.items()}
        lowest = min(wers.values())
        best[test_set] = {system for system, wer in wers.items() if wer == lowest}
    wers = {
        system: {t: by_set[t].displayed()["wer"] for t in test_sets}
        for system, by_set in table.items()
    }
    return Comparison(test_sets, wers, best)


class AblationResult(NamedTuple):
    baseline: WerReport
    dropped: WerReport
    # dropped WER minus baseline WER, in percentage points
    delta: Fraction

    def displayed_delta(self) -> Decimal:
        return round_half_away(self.delta)


def hesitation_ablation(
    stm: Sequence[StmSegment],
    ctm: Sequence[CtmEntry],
    rules: Optional[NormRules] = None,
    costs: AlignCosts = NIST_COSTS,
    jobs: int = 1,
) -> AblationResult:
    """
    Score as given, then again with hesitations removed from both sides.
    """
    rules = rules or NormRules()
    if rules.drop_hesitations:
        raise RulesConflictError("The baseline run must keep hesitations")
    baseline, _ = score(stm, ctm, rules, costs, jobs)
    dropped, _ = score(stm, ctm, rules.with_drop_hesitations(), costs, jobs)
    return AblationResult(baseline, dropped, dropped.wer - baseline.wer)
