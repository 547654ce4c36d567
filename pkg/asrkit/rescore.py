"""
n-best rescoring: acoustic score plus a weighted LM score, where the LM score
mixes the n-gram stream with externally computed neural LM scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from math import isfinite
from typing import Mapping
from typing import NamedTuple
from typing import Optional
from typing import Sequence

from asrkit.core import BaseJob
from asrkit.corpus_io import NBestEntry
from asrkit.exceptions import ConfigError
from asrkit.exceptions import EmptyNBestError
from asrkit.exceptions import JoinError
from asrkit.ngram_lm import ZERO_LOGPROB
from asrkit.ngram_lm import LanguageModel
from asrkit.utils import fan_out
from asrkit.utils import log10_mix

NO_NORMALIZATION = "none"
PER_UTTERANCE_SHIFT = "per-utterance-shift"
NORMALIZATIONS = (NO_NORMALIZATION, PER_UTTERANCE_SHIFT)
NGRAM_STREAM = "ngram"


@dataclass(frozen=True)
class RescoreConfig:
    lm_weight: float = 1.0
    word_insertion_penalty: float = 0.0
    # model name -> weight, what is left goes to the n-gram stream
    nn_mix: Mapping[str, float] = field(default_factory=dict)
    # When set, the n-gram stream is scored from this model instead of the list
    ngram_model: Optional[LanguageModel] = None
    log_linear: bool = False

    def __post_init__(self):
        if not isfinite(self.lm_weight) or self.lm_weight < 0:
            raise ConfigError(f"lm_weight must be finite and non-negative, got {self.lm_weight}")
        if not isfinite(self.word_insertion_penalty):
            raise ConfigError("word_insertion_penalty must be finite")
        for name, weight in self.nn_mix.items():
            if not isfinite(weight) or not 0.0 <= weight <= 1.0:
                raise ConfigError(f"nn_mix weight for {name} must be in [0, 1], got {weight}")
        if sum(self.nn_mix.values()) > 1.0 + 1e-9:
            raise ConfigError(f"nn_mix weights sum to {sum(self.nn_mix.values())}, above 1")

    @property
    def ngram_weight(self) -> float:
        return max(0.0, 1.0 - sum(self.nn_mix.values()))


def logprob_floor(entry: NBestEntry) -> float:
    """
    The lowest LM score a hypothesis can get, ZERO_LOGPROB per word and </s>.
    """
    return ZERO_LOGPROB * (len(entry.words) + 1)


def ngram_score(entry: NBestEntry, cfg: RescoreConfig) -> float:
    """
    >>> from asrkit.corpus_io import ARPA_EXAMPLE, read_arpa
    >>> cfg = RescoreConfig(ngram_model=read_arpa(ARPA_EXAMPLE.splitlines()))
    >>> round(ngram_score(NBestEntry("u", 1, -1.0, -1.0, ("a", "zzz")), cfg), 5)
    -99.30103
    """
    if cfg.ngram_model is not None:
        # a word the model gives no probability to scores ZERO_LOGPROB, not -inf
        return sum(max(lp, ZERO_LOGPROB) for lp in cfg.ngram_model.token_logprobs(entry.words))
    return entry.lm_score


def lm_mixture_logprob(entry: NBestEntry, cfg: RescoreConfig) -> float:
    """
    log10 of the mixed sequence probability.

    >>> entry = NBestEntry("u", 1, -100.0, -20.0, ("a",), {"ffnn": -20.0})
    >>> lm_mixture_logprob(entry, RescoreConfig(nn_mix={"ffnn": 0.5}))
    -20.0
    """
    scores = []
    weights = []
    for name, weight in cfg.nn_mix.items():
        if name not in entry.extra_lm_scores:
            raise JoinError(entry.utterance_id, entry.rank, name)
        scores.append(entry.extra_lm_scores[name])
        weights.append(weight)
    scores.append(ngram_score(entry, cfg))
    weights.append(cfg.ngram_weight)
    if cfg.log_linear:
        mixed = sum(w * s for w, s in zip(weights, scores) if w)
    else:
        mixed = log10_mix(scores, weights)
    return mixed if isfinite(mixed) else logprob_floor(entry)


def total_score(entry: NBestEntry, cfg: RescoreConfig) -> float:
    """
    am + lm_weight * log10(p_mix) + word_insertion_penalty * |words|

    >>> total_score(NBestEntry("u", 1, -100.0, -20.0, ("a", "b")), RescoreConfig())
    -120.0
    """
    # with no LM weight the LM streams are not consulted at all
    lm = cfg.lm_weight * lm_mixture_logprob(entry, cfg) if cfg.lm_weight else 0.0
    return entry.am_score + lm + cfg.word_insertion_penalty * len(entry.words)


class ScoredHypothesis(NamedTuple):
    entry: NBestEntry
    total: float


def rank_order(scored: Sequence[ScoredHypothesis]) -> list[ScoredHypothesis]:
    """
    Best total first, ties go to the lower original rank.
    """
    return sorted(scored, key=lambda s: (-s.total, s.entry.rank))


def rerank_list(entries: Sequence[NBestEntry], cfg: RescoreConfig) -> list[ScoredHypothesis]:
    if not entries:
        raise EmptyNBestError("Can't rerank an empty n-best list")
    return rank_order([ScoredHypothesis(e, total_score(e, cfg)) for e in entries])


def _rerank_task(args: tuple[list[NBestEntry], RescoreConfig]) -> list[ScoredHypothesis]:
    entries, cfg = args
    return rerank_list(entries, cfg)


class Reranked(NamedTuple):
    best: dict[str, NBestEntry]
    lists: dict[str, list[ScoredHypothesis]]

    def as_nbest(self) -> dict[str, list[NBestEntry]]:
        """
        The reranked lists with ranks renumbered from 1.
        """
        return {
            utt: [replace(s.entry, rank=i) for i, s in enumerate(scored, start=1)]
            for utt, scored in self.lists.items()
        }


def rerank(
    nbest: Mapping[str, Sequence[NBestEntry]], cfg: RescoreConfig, jobs: int = 1
) -> Reranked:
    """
    >>> nbest = {"u": [NBestEntry("u", 1, -10.0, -5.0, ("a",)), NBestEntry("u", 2, -9.0, -4.0, ("b",))]}
    >>> rerank(nbest, RescoreConfig()).best["u"].words
    ('b',)
    """
    utterances = list(nbest)
    lists = fan_out(_rerank_task, [(list(nbest[u]), cfg) for u in utterances], jobs=jobs)
    return Reranked(
        {u: scored[0].entry for u, scored in zip(utterances, lists)},
        dict(zip(utterances, lists)),
    )


def _shifted(entries: Sequence[NBestEntry]) -> list[NBestEntry]:
    if not entries:
        return []
    best = max(e.am_score for e in entries)
    return [replace(e, am_score=e.am_score - best) for e in entries]


def merge_nbest(
    system_a: Mapping[str, Sequence[NBestEntry]],
    system_b: Mapping[str, Sequence[NBestEntry]],
    normalization: str = NO_NORMALIZATION,
) -> dict[str, list[NBestEntry]]:
    """
    Union of two systems' hypotheses per utterance. A word sequence present in
    both keeps the instance with the higher am + lm score, system_a on ties.
    Entries keep system_a's order followed by the new ones from system_b, and are
    renumbered from 1.

    >>> a = {"u": [NBestEntry("u", 1, -10.0, -5.0, ("x",))]}
    >>> b = {"u": [NBestEntry("u", 1, -12.0, -5.0, ("y",))]}
    >>> [e.words for e in merge_nbest(a, b)["u"]]
    [('x',), ('y',)]
    """
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"Unknown normalization {normalization!r}")
    merged = {}
    for utterance_id in [*system_a, *(u for u in system_b if u not in system_a)]:
        entries_a = list(system_a.get(utterance_id, ()))
        entries_b = list(system_b.get(utterance_id, ()))
        if normalization == PER_UTTERANCE_SHIFT:
            entries_a = _shifted(entries_a)
            entries_b = _shifted(entries_b)
        kept: dict[tuple[str, ...], NBestEntry] = {}
        for entry in [*entries_a, *entries_b]:
            current = kept.get(entry.words)
            if current is None:
                kept[entry.words] = entry
            elif entry.am_score + entry.lm_score > current.am_score + current.lm_score:
                kept[entry.words] = entry
        merged[utterance_id] = [
            replace(e, utterance_id=utterance_id, rank=i)
            for i, e in enumerate(kept.values(), start=1)
        ]
    return merged


class Rescorer(BaseJob):
    def __init__(
        self,
        nbest: Mapping[str, Sequence[NBestEntry]],
        cfg: RescoreConfig,
        jobs: int = 1,
        **kwargs,
    ):
        super().__init__(**kwargs)
        self.nbest = nbest
        self.cfg = cfg
        self.jobs = jobs

    def __call__(self) -> Reranked:
        streams = [*self.cfg.nn_mix, NGRAM_STREAM]
        self.add_log(
            mod="rescore",
            act="mix",
            msg=" ".join(
                f"{name}={weight}"
                for name, weight in zip(streams, [*self.cfg.nn_mix.values(), self.cfg.ngram_weight])
            ),
        )
        result = rerank(self.nbest, self.cfg, self.jobs)
        changed = sum(1 for best in result.best.values() if best.rank != 1)
        self.add_log(
            mod="rescore",
            act="rerank",
            msg=f"{len(result.best)} utterances, {changed} new 1-best",
        )
        return result
