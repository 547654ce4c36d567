"""
Word level alignment of a reference against a hypothesis, and the mapping of
time-marked hypothesis words onto reference segments.
"""

from __future__ import annotations

from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Union

from asrkit.corpus_io import CtmEntry
from asrkit.corpus_io import StmSegment
from asrkit.exceptions import ConfigError
from asrkit.exceptions import InvariantViolation
from asrkit.exceptions import OverlapError
from asrkit.textnorm import NormToken
from asrkit.utils import get_setting

MATCH = "match"
SUBSTITUTION = "substitution"
DELETION = "deletion"
INSERTION = "insertion"


@dataclass(frozen=True)
class AlignCosts:
    sub_cost: int = 4
    del_cost: int = 3
    ins_cost: int = 3

    def __post_init__(self):
        for name in ("sub_cost", "del_cost", "ins_cost"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {value!r}")
        if self.sub_cost > self.del_cost + self.ins_cost:
            raise ConfigError(
                f"sub_cost {self.sub_cost} exceeds del_cost + ins_cost, "
                "substitutions would never be chosen"
            )

    @classmethod
    def default(cls) -> AlignCosts:
        """
        >>> AlignCosts.default()
        AlignCosts(sub_cost=4, del_cost=3, ins_cost=3)
        """
        return cls(*get_setting("DEFAULT_COSTS"))

    @classmethod
    def parse(cls, text: str) -> AlignCosts:
        """
        >>> AlignCosts.parse("1,1,1")
        AlignCosts(sub_cost=1, del_cost=1, ins_cost=1)
        """
        try:
            sub, dele, ins = (int(x) for x in text.split(","))
        except ValueError as exc:
            raise ConfigError(f"Costs must be 'sub,del,ins' integers, got {text!r}") from exc
        return cls(sub, dele, ins)


NIST_COSTS = AlignCosts(4, 3, 3)
UNIT_COSTS = AlignCosts(1, 1, 1)


@dataclass(frozen=True)
class AlignmentOp:
    kind: str
    ref_word: Optional[str] = None
    hyp_word: Optional[str] = None
    # A deletion of an optionally deletable reference word: neither error nor match
    optional: bool = False

    def __post_init__(self):
        if self.kind in (MATCH, SUBSTITUTION):
            ok = self.ref_word is not None and self.hyp_word is not None
            if ok and (self.kind == MATCH) != (self.ref_word == self.hyp_word):
                ok = False
        elif self.kind == DELETION:
            ok = self.ref_word is not None and self.hyp_word is None
        elif self.kind == INSERTION:
            ok = self.ref_word is None and self.hyp_word is not None and not self.optional
        else:
            ok = False
        if not ok:
            raise InvariantViolation(f"Malformed alignment op {self!r}")

    @property
    def is_error(self) -> bool:
        return self.kind != MATCH and not self.optional


@dataclass
class OpCounts:
    matches: int = 0
    subs: int = 0
    dels: int = 0
    inss: int = 0
    optional_dels: int = 0

    def __add__(self, other: OpCounts) -> OpCounts:
        return OpCounts(
            self.matches + other.matches,
            self.subs + other.subs,
            self.dels + other.dels,
            self.inss + other.inss,
            self.optional_dels + other.optional_dels,
        )

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.inss


class Alignment(NamedTuple):
    ops: list[AlignmentOp]
    cost: int

    def counts(self) -> OpCounts:
        result = OpCounts()
        for op in self.ops:
            if op.kind == MATCH:
                result.matches += 1
            elif op.kind == SUBSTITUTION:
                result.subs += 1
            elif op.kind == INSERTION:
                result.inss += 1
            elif op.optional:
                result.optional_dels += 1
            else:
                result.dels += 1
        return result


RefToken = Union[str, NormToken]


def _split_ref(ref: Sequence[RefToken]) -> tuple[list[str], list[bool]]:
    words = []
    optional = []
    for token in ref:
        if isinstance(token, str):
            words.append(token)
            optional.append(False)
        else:
            words.append(token.text)
            optional.append(token.optional)
    return words, optional


def align(
    ref: Sequence[RefToken],
    hyp: Sequence[str],
    costs: AlignCosts = NIST_COSTS,
) -> Alignment:
    """
    Minimum cost alignment. Reference tokens flagged optional delete for free.
    The backtrace prefers match, then substitution, then deletion, then insertion.

    >>> result = align(["the", "big", "cat"], ["the", "bag", "cat", "sat"])
    >>> [op.kind for op in result.ops], result.cost
    (['match', 'substitution', 'match', 'insertion'], 7)
    >>> align(["the", "cat"], []).cost
    6
    >>> align([], []).ops
    []
    """
    ref_words, optional = _split_ref(ref)
    hyp = list(hyp)
    n = len(ref_words)
    m = len(hyp)
    sub = costs.sub_cost
    ins = costs.ins_cost
    dels = [0 if opt else costs.del_cost for opt in optional]

    table = [list(range(0, (m + 1) * ins, ins)) if ins else [0] * (m + 1)]
    for i in range(1, n + 1):
        prev = table[-1]
        r = ref_words[i - 1]
        dc = dels[i - 1]
        row = [prev[0] + dc]
        for j in range(1, m + 1):
            best = prev[j - 1] if r == hyp[j - 1] else prev[j - 1] + sub
            x = prev[j] + dc
            if x < best:
                best = x
            x = row[j - 1] + ins
            if x < best:
                best = x
            row.append(best)
        table.append(row)

    ops = []
    i, j = n, m
    while i or j:
        here = table[i][j]
        if i and j:
            r = ref_words[i - 1]
            h = hyp[j - 1]
            if r == h and here == table[i - 1][j - 1]:
                ops.append(AlignmentOp(MATCH, r, h))
                i -= 1
                j -= 1
                continue
            if r != h and here == table[i - 1][j - 1] + sub:
                ops.append(AlignmentOp(SUBSTITUTION, r, h))
                i -= 1
                j -= 1
                continue
        if i and here == table[i - 1][j] + dels[i - 1]:
            ops.append(AlignmentOp(DELETION, ref_words[i - 1], None, optional[i - 1]))
            i -= 1
            continue
        ops.append(AlignmentOp(INSERTION, None, hyp[j - 1]))
        j -= 1
    ops.reverse()
    return Alignment(ops, table[n][m])


def edit_cost(ref: Sequence[str], hyp: Sequence[str], costs: AlignCosts = NIST_COSTS) -> int:
    """
    Cost only, two rows of memory.

    >>> edit_cost(["a", "b", "c"], ["a", "c"], UNIT_COSTS)
    1
    """
    sub, dc, ins = costs.sub_cost, costs.del_cost, costs.ins_cost
    prev = [j * ins for j in range(len(hyp) + 1)]
    for r in ref:
        row = [prev[0] + dc]
        for j, h in enumerate(hyp, start=1):
            row.append(min(prev[j - 1] + (0 if r == h else sub), prev[j] + dc, row[j - 1] + ins))
        prev = row
    return prev[-1]


def format_alignment(ops: Sequence[AlignmentOp]) -> str:
    """
    REF / HYP / Eval lines with errors upper-cased.

    >>> print(format_alignment(align(["the", "big", "cat"], ["the", "bag", "cat", "sat"]).ops))
    REF:  the BIG cat ***
    HYP:  the BAG cat SAT
    Eval:     S       I
    """
    ref_cols, hyp_cols, eval_cols = [], [], []
    for op in ops:
        if op.kind == MATCH:
            r, h, mark = op.ref_word, op.hyp_word, ""
        elif op.kind == SUBSTITUTION:
            r, h, mark = op.ref_word.upper(), op.hyp_word.upper(), "S"
        elif op.kind == DELETION and op.optional:
            r, h, mark = f"({op.ref_word})", "", ""
        elif op.kind == DELETION:
            r, h, mark = op.ref_word.upper(), "", "D"
        else:
            r, h, mark = "", op.hyp_word.upper(), "I"
        width = max(len(r), len(h), 1)
        ref_cols.append(r.ljust(width) if r else "*" * width)
        hyp_cols.append(h.ljust(width) if h else "*" * width)
        eval_cols.append(mark.ljust(width))
    lines = [
        "REF:  " + " ".join(ref_cols),
        "HYP:  " + " ".join(hyp_cols),
        "Eval: " + " ".join(eval_cols),
    ]
    return "\n".join(line.rstrip() for line in lines)


class SegmentMapping(NamedTuple):
    # Parallel to the segment list it was built from
    per_segment: list[list[CtmEntry]]
    unassigned: list[CtmEntry]


def find_overlaps(stm: Sequence[StmSegment]) -> list[tuple[str, str]]:
    """
    >>> a = StmSegment("r", "1", "s", 0.0, 5.0)
    >>> b = StmSegment("r", "1", "s", 4.0, 6.0)
    >>> find_overlaps([a, b])
    [('r-1-0000000-0000500', 'r-1-0000400-0000600')]
    """
    by_stream: dict[tuple[str, str], list[StmSegment]] = defaultdict(list)
    for segment in stm:
        by_stream[segment.stream].append(segment)
    overlaps = []
    for segments in by_stream.values():
        segments = sorted(segments, key=lambda s: (s.tbeg, s.tend))
        widest = segments[0]
        for segment in segments[1:]:
            if segment.tbeg < widest.tend:
                overlaps.append((widest.segment_id, segment.segment_id))
            if segment.tend > widest.tend:
                widest = segment
    return overlaps


def map_ctm_to_segments(ctm: Sequence[CtmEntry], stm: Sequence[StmSegment]) -> SegmentMapping:
    """
    A word goes to the segment holding its midpoint, segments being [tbeg, tend).
    Words landing in no segment, or in one excluded from scoring, are unassigned.

    >>> seg = StmSegment("CNN", "1", "spkA", 10.0, 12.5, tokens=("hello",))
    >>> mapping = map_ctm_to_segments(
    ...     [CtmEntry("CNN", "1", 8.9, 0.2, "early"), CtmEntry("CNN", "1", 10.9, 0.2, "hello")],
    ...     [seg],
    ... )
    >>> [[e.word for e in words] for words in mapping.per_segment], [e.word for e in mapping.unassigned]
    ([['hello']], ['early'])
    """
    overlaps = find_overlaps(stm)
    if overlaps:
        raise OverlapError(overlaps)
    starts: dict[tuple[str, str], list[float]] = defaultdict(list)
    indexes: dict[tuple[str, str], list[int]] = defaultdict(list)
    for index in sorted(range(len(stm)), key=lambda k: stm[k].tbeg):
        segment = stm[index]
        starts[segment.stream].append(segment.tbeg)
        indexes[segment.stream].append(index)

    per_segment: list[list[CtmEntry]] = [[] for _ in stm]
    unassigned = []
    for entry in ctm:
        stream = entry.stream
        midpoint = entry.tbeg + entry.tdur / 2
        pos = bisect_right(starts.get(stream, ()), midpoint) - 1
        if pos >= 0:
            segment_index = indexes[stream][pos]
            segment = stm[segment_index]
            if midpoint < segment.tend and segment.scorable:
                per_segment[segment_index].append(entry)
                continue
        unassigned.append(entry)
    return SegmentMapping(per_segment, unassigned)
