"""
Lightly supervised data selection: compare caption text with several automatic
decodes of the same audio and keep the segments where they agree.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from itertools import combinations
from typing import Iterable
from typing import Mapping
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Union

from asrkit.aligner import UNIT_COSTS
from asrkit.aligner import AlignCosts
from asrkit.aligner import align
from asrkit.aligner import map_ctm_to_segments
from asrkit.core import BaseJob
from asrkit.corpus_io import CtmEntry
from asrkit.corpus_io import StmSegment
from asrkit.exceptions import AgreementError
from asrkit.exceptions import ConfigError
from asrkit.exceptions import EmptyCaptionsError
from asrkit.exceptions import ThresholdOrderError
from asrkit.ngram_lm import InterpolatedLm
from asrkit.ngram_lm import LanguageModel
from asrkit.ngram_lm import count_ngrams
from asrkit.ngram_lm import estimate
from asrkit.textnorm import NormRules
from asrkit.textnorm import normalize_words
from asrkit.utils import fan_out
from asrkit.utils import get_setting

STRICT = "strict"
RELAXED = "relaxed"
REJECTED = "rejected"
TIERS = (STRICT, RELAXED, REJECTED)


def caption_match(
    caption: Sequence[str], hypothesis: Sequence[str], costs: AlignCosts = UNIT_COSTS
) -> float:
    """
    1 - (S + D + I) / max(|caption|, 1), clamped to [0, 1].

    >>> caption_match("a b c d e f g h i j".split(), "a b c d e f g h i x".split())
    0.9
    >>> caption_match(["a", "b"], ["c", "d"])
    0.0
    >>> caption_match([], [])
    1.0
    """
    errors = align(caption, hypothesis, costs).counts().errors
    return min(1.0, max(0.0, 1.0 - errors / max(len(caption), 1)))


def cross_system_agreement(
    hypotheses: Sequence[Sequence[str]], costs: AlignCosts = UNIT_COSTS
) -> float:
    """
    Mean over unordered system pairs. caption_match is not symmetric when lengths
    differ, so each pair counts the mean of both directions.

    >>> cross_system_agreement([["a", "b"], ["a", "b"], ["a", "b"]])
    1.0
    >>> cross_system_agreement([["a"]])
    Traceback (most recent call last):
    ...
    asrkit.exceptions.AgreementError: Agreement needs at least 2 systems, got 1
    """
    if len(hypotheses) < 2:
        raise AgreementError(f"Agreement needs at least 2 systems, got {len(hypotheses)}")
    pairs = list(combinations(hypotheses, 2))
    total = sum(
        (caption_match(a, b, costs) + caption_match(b, a, costs)) / 2 for a, b in pairs
    )
    return total / len(pairs)


@dataclass(frozen=True)
class SelectionRecord:
    segment_id: str
    caption: tuple[str, ...]
    hypotheses: Mapping[str, tuple[str, ...]]
    confidences: Mapping[str, Optional[float]]
    agreement: float
    caption_match: float
    decision: Optional[str] = None

    def __post_init__(self):
        for name in ("agreement", "caption_match"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")

    @property
    def min_confidence(self) -> Optional[float]:
        """
        The weakest system's mean confidence. None as soon as one system has none.
        """
        values = list(self.confidences.values())
        if not values or any(v is None for v in values):
            return None
        return min(values)


@dataclass(frozen=True)
class Thresholds:
    agreement: float
    caption_match: float
    # None switches the confidence gate off
    confidence: Optional[float] = None

    def passes(self, record: SelectionRecord) -> bool:
        if record.agreement < self.agreement or record.caption_match < self.caption_match:
            return False
        if self.confidence is None:
            return True
        confidence = record.min_confidence
        return confidence is not None and confidence >= self.confidence

    def at_least(self, other: Thresholds) -> bool:
        """
        True when every gate here is at least as hard to pass as in other.
        """
        if self.agreement < other.agreement or self.caption_match < other.caption_match:
            return False
        if other.confidence is None:
            return True
        return self.confidence is not None and self.confidence >= other.confidence


STRICT_DEFAULT = Thresholds(0.95, 0.95, 0.9)
RELAXED_DEFAULT = Thresholds(0.8, 0.8, 0.7)


class TierSummary(NamedTuple):
    segments: int
    words: int


class Selection(NamedTuple):
    records: list[SelectionRecord]
    # strict counts are included in relaxed ones
    summary: dict[str, TierSummary]

    def members(self, tier: str) -> list[SelectionRecord]:
        if tier == RELAXED:
            return [r for r in self.records if r.decision in (STRICT, RELAXED)]
        return [r for r in self.records if r.decision == tier]


def select(
    records: Iterable[SelectionRecord],
    strict: Thresholds = STRICT_DEFAULT,
    relaxed: Thresholds = RELAXED_DEFAULT,
) -> Selection:
    """
    >>> rec = SelectionRecord("s1", ("a",), {"x": ("a",), "y": ("a",)}, {"x": 1.0, "y": 1.0}, 1.0, 1.0)
    >>> select([rec]).records[0].decision
    'strict'
    >>> select([rec], Thresholds(1.1, 0.0), Thresholds(1.1, 0.0)).records[0].decision
    'rejected'
    """
    if not strict.at_least(relaxed):
        raise ThresholdOrderError(f"Strict thresholds {strict} are looser than relaxed {relaxed}")
    labeled = []
    counts = {tier: [0, 0] for tier in TIERS}
    for record in records:
        if strict.passes(record):
            decision = STRICT
        elif relaxed.passes(record):
            decision = RELAXED
        else:
            decision = REJECTED
        labeled.append(replace(record, decision=decision))
        counts[decision][0] += 1
        counts[decision][1] += len(record.caption)
    summary = {
        STRICT: TierSummary(*counts[STRICT]),
        RELAXED: TierSummary(
            counts[STRICT][0] + counts[RELAXED][0], counts[STRICT][1] + counts[RELAXED][1]
        ),
        REJECTED: TierSummary(*counts[REJECTED]),
    }
    return Selection(labeled, summary)


def build_biased_lm(
    captions: Iterable[Sequence[str]],
    background: LanguageModel,
    bias_weight: Optional[float] = None,
) -> InterpolatedLm:
    """
    A caption model of the background's order, mixed with the background at
    (bias_weight, 1 - bias_weight).
    """
    if bias_weight is None:
        bias_weight = get_setting("DEFAULT_BIAS_WEIGHT")
    if not 0.0 < bias_weight <= 1.0:
        raise ConfigError(f"bias_weight must be in (0, 1], got {bias_weight}")
    counts = count_ngrams((c for c in captions if c), background.order)
    if not counts:
        raise EmptyCaptionsError("No caption words to build a biased model from")
    return InterpolatedLm([estimate(counts), background], [bias_weight, 1.0 - bias_weight])


@dataclass
class SystemDecode:
    words: list[str] = field(default_factory=list)
    confidences: list[Optional[float]] = field(default_factory=list)

    def mean_confidence(self) -> Optional[float]:
        if not self.confidences or any(c is None for c in self.confidences):
            return None
        return sum(self.confidences) / len(self.confidences)


def _build_record(args) -> SelectionRecord:
    segment_id, caption, decodes, rules, costs = args
    caption = tuple(normalize_words(caption, rules))
    hypotheses = {
        name: tuple(normalize_words(decode.words, rules)) for name, decode in decodes.items()
    }
    return SelectionRecord(
        segment_id,
        caption,
        hypotheses,
        {name: decode.mean_confidence() for name, decode in decodes.items()},
        cross_system_agreement(list(hypotheses.values()), costs),
        min(caption_match(caption, h, costs) for h in hypotheses.values()),
    )


class Selector(BaseJob):
    """
    Captions come either as STM segments, with decode words mapped by time,
    or as segment_id -> words, with CTM recording ids naming the segments.
    """

    def __init__(
        self,
        captions: Union[Sequence[StmSegment], Mapping[str, Sequence[str]]],
        systems: Mapping[str, Sequence[CtmEntry]],
        rules: Optional[NormRules] = None,
        strict: Thresholds = STRICT_DEFAULT,
        relaxed: Thresholds = RELAXED_DEFAULT,
        costs: AlignCosts = UNIT_COSTS,
        jobs: int = 1,
        **kwargs,
    ):
        super().__init__(**kwargs)
        if len(systems) < 2:
            raise AgreementError(f"Agreement needs at least 2 systems, got {len(systems)}")
        if not strict.at_least(relaxed):
            raise ThresholdOrderError(
                f"Strict thresholds {strict} are looser than relaxed {relaxed}"
            )
        self.captions = captions
        self.systems = systems
        self.rules = rules or NormRules()
        self.strict = strict
        self.relaxed = relaxed
        self.costs = costs
        self.jobs = jobs

    def _decodes(self) -> list[tuple[str, Sequence[str], dict[str, SystemDecode]]]:
        if isinstance(self.captions, Mapping):
            segments = [(sid, words) for sid, words in self.captions.items()]
            decodes: dict[str, dict[str, SystemDecode]] = defaultdict(dict)
            for name, ctm in self.systems.items():
                for entry in ctm:
                    decode = decodes[entry.recording_id].setdefault(name, SystemDecode())
                    decode.words.append(entry.word)
                    decode.confidences.append(entry.confidence)
            return [
                (
                    sid,
                    words,
                    {name: decodes[sid].get(name, SystemDecode()) for name in self.systems},
                )
                for sid, words in segments
            ]
        scorable = [s for s in self.captions if s.scorable]
        per_system = {
            name: map_ctm_to_segments(ctm, scorable).per_segment
            for name, ctm in self.systems.items()
        }
        result = []
        for index, segment in enumerate(scorable):
            decodes_here = {}
            for name, per_segment in per_system.items():
                entries = per_segment[index]
                decodes_here[name] = SystemDecode(
                    [e.word for e in entries], [e.confidence for e in entries]
                )
            result.append((segment.segment_id, segment.tokens, decodes_here))
        return result

    def __call__(self) -> Selection:
        segments = self._decodes()
        self.add_log(
            mod="select",
            act="collect",
            msg=f"{len(segments)} segments, {len(self.systems)} systems",
        )
        tasks = [(sid, caption, d, self.rules, self.costs) for sid, caption, d in segments]
        records = fan_out(_build_record, tasks, jobs=self.jobs)
        selection = select(records, self.strict, self.relaxed)
        for tier, summary in selection.summary.items():
            self.add_log(
                mod="select",
                act=tier,
                msg=f"{summary.segments} segments, {summary.words} words",
            )
        return selection
