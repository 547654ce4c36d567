"""
Backoff word n-gram models: counting, Witten-Bell estimation, queries,
linear interpolation and EM tuning of the interpolation weights.

All scores are log10.
"""

from __future__ import annotations

from collections import Counter
from collections import defaultdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from functools import cached_property
from math import log10
from typing import Iterable
from typing import Iterator
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Union

import numpy as np

from asrkit.core import BaseJob
from asrkit.exceptions import ConfigError
from asrkit.exceptions import DegenerateComponentError
from asrkit.exceptions import EmMonotonicityError
from asrkit.exceptions import EmptyCorpusError
from asrkit.exceptions import InputError
from asrkit.exceptions import OrderRangeError
from asrkit.utils import fan_out
from asrkit.utils import log10_mix

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIAL = frozenset({BOS, EOS, UNK})
MAX_ORDER = 6
# What ARPA files conventionally store for the conditioning-only start symbol
BOS_LOGPROB = -99.0
# Stands in for log10(0) where ARPA needs a finite number
ZERO_LOGPROB = -99.0
SMOOTHING_METHODS = ("witten-bell",)

NGram = tuple[str, ...]


def _check_order(order: int):
    if not 1 <= order <= MAX_ORDER:
        raise OrderRangeError(f"Order must be between 1 and {MAX_ORDER}, got {order}")


@dataclass
class NGramCounts:
    """
    Counts of every n-gram up to order. Sentences are padded with one <s> and one </s>,
    and <s> is never counted as a unigram since it is never predicted.
    """

    order: int
    counts: Counter = field(default_factory=Counter)

    def __post_init__(self):
        _check_order(self.order)

    def add_sentence(self, words: Sequence[str]):
        tokens = (BOS, *words, EOS)
        counts = self.counts
        for n in range(1, self.order + 1):
            for i in range(len(tokens) - n + 1):
                ngram = tokens[i : i + n]
                if n == 1 and i == 0:
                    continue
                counts[ngram] += 1

    def merge(self, other: NGramCounts) -> NGramCounts:
        """
        >>> a = count_ngrams([["a"]], 1)
        >>> (a + a).unigrams()
        {'a': 2, '</s>': 2}
        """
        if other.order != self.order:
            raise OrderRangeError(f"Can't merge order {self.order} with order {other.order}")
        return NGramCounts(self.order, self.counts + other.counts)

    __add__ = merge

    def apply_vocab(self, vocab: Iterable[str]) -> NGramCounts:
        """
        Map words outside vocab to <unk>, summing the counts that collapse.

        >>> counts = count_ngrams([["a", "x"], ["a", "y"]], 2)
        >>> counts.apply_vocab({"a"}).counts[("a", UNK)]
        2
        """
        keep = set(vocab) | SPECIAL
        result: Counter = Counter()
        for ngram, count in self.counts.items():
            result[tuple(w if w in keep else UNK for w in ngram)] += count
        return NGramCounts(self.order, result)

    def unigrams(self) -> dict[str, int]:
        return {ngram[0]: c for ngram, c in self.counts.items() if len(ngram) == 1}

    def of_order(self, n: int) -> dict[NGram, int]:
        return {ngram: c for ngram, c in self.counts.items() if len(ngram) == n}

    def __bool__(self):
        return bool(self.counts)


def count_ngrams(corpus: Iterable[Sequence[str]], order: int) -> NGramCounts:
    """
    Single pass over the corpus, which may be a generator.

    >>> counts = count_ngrams([["a", "b"], ["a", "c"]], 2)
    >>> counts.counts[("a",)], counts.counts[(BOS, "a")], counts.counts[("a", "b")]
    (2, 2, 1)
    >>> count_ngrams([], 2).counts
    Counter()
    """
    result = NGramCounts(order)
    for words in corpus:
        result.add_sentence(words)
    return result


def vocab_select(counts: Union[NGramCounts, dict[str, int]], target_size: int) -> frozenset[str]:
    """
    The target_size most frequent words, ties broken lexicographically.
    Sentence markers and <unk> are never part of the selection.

    >>> sorted(vocab_select({"a": 5, "b": 3, "c": 1}, 2))
    ['a', 'b']
    >>> sorted(vocab_select({"a": 5, "c": 3, "b": 3}, 2))
    ['a', 'b']
    >>> sorted(vocab_select({"a": 5, "b": 3}, 10))
    ['a', 'b']
    """
    if target_size < 1:
        raise InputError(f"Vocabulary size must be at least 1, got {target_size}")
    unigrams = counts.unigrams() if isinstance(counts, NGramCounts) else counts
    ranked = sorted(
        ((w, c) for w, c in unigrams.items() if w not in SPECIAL),
        key=lambda item: (-item[1], item[0]),
    )
    return frozenset(w for w, _ in ranked[:target_size])


@dataclass(frozen=True)
class NGramEntry:
    logprob: float
    backoff: Optional[float] = None


@dataclass
class NGramModel:
    order: int
    entries: dict[NGram, NGramEntry]
    smoothing_tag: str = "witten-bell"

    def __post_init__(self):
        _check_order(self.order)

    @cached_property
    def vocab(self) -> frozenset[str]:
        return frozenset(ngram[0] for ngram in self.entries if len(ngram) == 1)

    def counts_by_order(self) -> dict[int, int]:
        result = Counter(len(ngram) for ngram in self.entries)
        return {n: result[n] for n in range(1, self.order + 1)}

    def map_word(self, word: str) -> str:
        return word if word in self.vocab else UNK

    def _lookup(self, context: NGram, word: str) -> float:
        entries = self.entries
        total = 0.0
        while True:
            entry = entries.get((*context, word))
            if entry is not None:
                return total + entry.logprob
            if not context:
                return float("-inf")
            ctx_entry = entries.get(context)
            if ctx_entry is not None and ctx_entry.backoff is not None:
                total += ctx_entry.backoff
            context = context[1:]

    def logprob(self, context: Sequence[str], word: str) -> float:
        """
        log10 p(word | context). Only the last order - 1 context words count and
        words outside the vocabulary are read as <unk>.
        """
        if self.order > 1:
            context = tuple(self.map_word(w) for w in context[len(context) - self.order + 1 :])
        else:
            context = ()
        return self._lookup(context, self.map_word(word))

    def token_logprobs(self, words: Sequence[str]) -> list[float]:
        """
        One score per predicted token: each word then </s>.
        """
        history = [BOS]
        result = []
        for word in (*words, EOS):
            result.append(self.logprob(history, word))
            history.append(word)
        return result

    def sentence_logprob(self, words: Sequence[str]) -> float:
        return sum(self.token_logprobs(words))

    def context_mass(self, context: NGram) -> float:
        """
        Total probability of the distribution after context, over the predicted vocabulary.
        """
        predicted = [w for w in self.vocab if w != BOS]
        return sum(10 ** self.logprob(context, w) for w in predicted)

    def contexts(self) -> list[NGram]:
        return [ngram for ngram, entry in self.entries.items() if entry.backoff is not None]


def estimate(
    counts: NGramCounts,
    smoothing: str = "witten-bell",
    vocab: Optional[Iterable[str]] = None,
) -> NGramModel:
    """
    Witten-Bell backoff model. A context h seen N(h) times with T(h) distinct
    followers gives a seen word c(h, w) / (N(h) + T(h)), and the leftover
    T(h) / (N(h) + T(h)) goes to the lower order through the backoff weight.
    At order 1 the leftover is shared evenly by the vocabulary words never seen,
    <unk> included.

    >>> model = estimate(count_ngrams([["a", "b", "a", "b"]], 2))
    >>> round(10 ** model.logprob(["a"], "b"), 9)
    0.666666667
    >>> round(10 ** model.logprob(["a"], "a"), 9)
    0.111111111
    """
    if smoothing not in SMOOTHING_METHODS:
        raise ConfigError(f"Unknown smoothing {smoothing!r}")
    if vocab is not None:
        vocab = frozenset(vocab)
        counts = counts.apply_vocab(vocab)
    if not counts:
        raise EmptyCorpusError("Nothing to estimate a model from")

    unigrams = counts.unigrams()
    predicted = set(unigrams) | set(vocab or ()) | {EOS, UNK}
    predicted.discard(BOS)
    total = sum(unigrams.values())
    seen = len(unigrams)
    unseen = sorted(predicted - set(unigrams))
    entries: dict[NGram, NGramEntry] = {}
    if unseen:
        for word, count in unigrams.items():
            entries[(word,)] = NGramEntry(log10(count / (total + seen)))
        share = log10(seen / (total + seen) / len(unseen))
        for word in unseen:
            entries[(word,)] = NGramEntry(share)
    else:
        for word, count in unigrams.items():
            entries[(word,)] = NGramEntry(log10(count / total))
    entries[(BOS,)] = NGramEntry(BOS_LOGPROB)

    model = NGramModel(counts.order, entries, smoothing_tag=smoothing)
    for n in range(2, counts.order + 1):
        by_context: dict[NGram, list[tuple[str, int]]] = defaultdict(list)
        for ngram, count in counts.of_order(n).items():
            by_context[ngram[:-1]].append((ngram[-1], count))
        new_entries = {}
        for context, followers in by_context.items():
            n_tokens = sum(c for _, c in followers)
            n_types = len(followers)
            lower = context[1:]
            lower_mass = sum(10 ** model._lookup(lower, w) for w, _ in followers)
            denominator = 1.0 - lower_mass
            if denominator <= 1e-12:
                # lower order has nothing left for unseen words, fall back to ML
                for word, count in followers:
                    new_entries[(*context, word)] = NGramEntry(log10(count / n_tokens))
                backoff = ZERO_LOGPROB
            else:
                for word, count in followers:
                    new_entries[(*context, word)] = NGramEntry(
                        log10(count / (n_tokens + n_types))
                    )
                backoff = log10(n_types / (n_tokens + n_types) / denominator)
            entries[context] = replace(entries[context], backoff=backoff)
        entries.update(new_entries)
    return model


class InterpolatedLm:
    """
    Weighted mixture of models, mixed in the probability domain.

    >>> lm = InterpolatedLm([estimate(count_ngrams([["a"]], 1))], [1.0])
    >>> lm.order
    1
    """

    components: list[NGramModel]
    weights: tuple[float, ...]

    def __init__(self, components: Sequence[NGramModel], weights: Sequence[float]):
        if len(components) != len(weights):
            raise ConfigError(f"{len(components)} components but {len(weights)} weights")
        if not components:
            raise ConfigError("A mixture needs at least one component")
        if any(not np.isfinite(w) or w < 0 for w in weights):
            raise ConfigError(f"Weights must be finite and non-negative: {list(weights)}")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError(f"Weights must sum to 1, got {sum(weights)}")
        self.components = list(components)
        self.weights = tuple(float(w) for w in weights)

    @property
    def order(self) -> int:
        return max(c.order for c in self.components)

    @property
    def vocab(self) -> frozenset[str]:
        return frozenset().union(*(c.vocab for c in self.components))

    def map_word(self, word: str) -> str:
        return word if word in self.vocab else UNK

    def logprob(self, context: Sequence[str], word: str) -> float:
        return log10_mix([c.logprob(context, word) for c in self.components], self.weights)

    def token_logprobs(self, words: Sequence[str]) -> list[float]:
        per_component = [c.token_logprobs(words) for c in self.components]
        return [log10_mix(column, self.weights) for column in zip(*per_component)]

    def sentence_logprob(self, words: Sequence[str]) -> float:
        return sum(self.token_logprobs(words))


LanguageModel = Union[NGramModel, InterpolatedLm]


def logprob(lm: LanguageModel, context: Sequence[str], word: str) -> float:
    """
    >>> a = NGramModel(1, {("x",): NGramEntry(log10(0.2)), (UNK,): NGramEntry(log10(0.8))})
    >>> b = NGramModel(1, {("x",): NGramEntry(log10(0.4)), (UNK,): NGramEntry(log10(0.6))})
    >>> round(10 ** logprob(InterpolatedLm([a, b], [0.5, 0.5]), [], "x"), 12)
    0.3
    """
    return lm.logprob(context, word)


class PerplexityStats(NamedTuple):
    sentences: int
    tokens: int
    oovs: int
    logprob: float
    perplexity: float


def perplexity_stats(lm: LanguageModel, sentences: Iterable[Sequence[str]]) -> PerplexityStats:
    """
    Tokens are the words plus one </s> per sentence. OOVs are scored as <unk>
    and counted.
    """
    n_sentences = n_tokens = n_oovs = 0
    total = 0.0
    for words in sentences:
        n_sentences += 1
        n_tokens += len(words) + 1
        n_oovs += sum(1 for w in words if lm.map_word(w) == UNK and w != UNK)
        total += lm.sentence_logprob(words)
    if not n_tokens:
        raise EmptyCorpusError("No text to compute perplexity on")
    return PerplexityStats(n_sentences, n_tokens, n_oovs, total, 10 ** (-total / n_tokens))


def perplexity(lm: LanguageModel, sentences: Iterable[Sequence[str]]) -> float:
    return perplexity_stats(lm, sentences).perplexity


def event_matrix(
    components: Sequence[LanguageModel], heldout: Iterable[Sequence[str]]
) -> np.ndarray:
    """
    Probability of every held-out event under every component: one row per
    predicted token, one column per component.
    """
    rows: list[list[float]] = [[] for _ in components]
    for words in heldout:
        for i, component in enumerate(components):
            rows[i].extend(component.token_logprobs(words))
    if not rows or not rows[0]:
        raise EmptyCorpusError("Held-out text is empty")
    return np.power(10.0, np.asarray(rows, dtype=float).T)


class EmStep(NamedTuple):
    responsibilities: np.ndarray
    weights: np.ndarray
    loglik: float


def em_step(matrix: np.ndarray, weights: Sequence[float]) -> EmStep:
    """
    One EM iteration. loglik is the log10 likelihood under the weights passed in.

    >>> step = em_step(np.array([[0.2, 0.4]]), [0.5, 0.5])
    >>> step.responsibilities.round(6).tolist()
    [[0.333333, 0.666667]]
    >>> round(step.loglik, 9) == round(np.log10(0.3), 9)
    True
    """
    w = np.asarray(weights, dtype=float)
    weighted = matrix * w
    mix = weighted.sum(axis=1)
    responsibilities = weighted / mix[:, None]
    new_weights = responsibilities.mean(axis=0)
    return EmStep(responsibilities, new_weights / new_weights.sum(), float(np.log10(mix).sum()))


def _loglik(matrix: np.ndarray, weights: np.ndarray) -> float:
    return float(np.log10(matrix @ weights).sum())


class EmResult(NamedTuple):
    weights: tuple[float, ...]
    history: list[float]


def tune_weights_em(
    components: Sequence[LanguageModel],
    heldout: Iterable[Sequence[str]],
    max_iters: int = 50,
    tol: float = 1e-6,
    initial: Optional[Sequence[float]] = None,
) -> EmResult:
    """
    Mixture weights maximizing held-out likelihood. history holds the log10
    likelihood before the first iteration and after each one.
    """
    if len(components) < 2:
        raise InputError("Tuning weights needs at least 2 components")
    return tune_matrix_em(event_matrix(components, heldout), max_iters, tol, initial)


def tune_matrix_em(
    matrix: np.ndarray,
    max_iters: int = 50,
    tol: float = 1e-6,
    initial: Optional[Sequence[float]] = None,
) -> EmResult:
    """
    >>> result = tune_matrix_em(np.array([[0.9, 0.1], [0.8, 0.2]]), max_iters=20)
    >>> result.weights[0] > 0.9
    True
    """
    n_components = matrix.shape[1]
    for index in range(n_components):
        if not np.any(matrix[:, index] > 0):
            raise DegenerateComponentError(index)
    # events no component can produce say nothing about the weights
    matrix = matrix[matrix.sum(axis=1) > 0]
    if initial is None:
        weights = np.full(n_components, 1.0 / n_components)
    else:
        weights = np.asarray(initial, dtype=float)
    current = _loglik(matrix, weights)
    history = [current]
    for iteration in range(1, max_iters + 1):
        weights = em_step(matrix, weights).weights
        updated = _loglik(matrix, weights)
        if updated < current - 1e-9 * max(1.0, abs(current)):
            raise EmMonotonicityError(iteration, current, updated)
        history.append(updated)
        improvement = updated - current
        current = updated
        if improvement < tol:
            break
    return EmResult(tuple(float(w) for w in weights / weights.sum()), history)


class LmTrainer(BaseJob):
    """
    One model per corpus over a shared vocabulary, selected from the union of
    all corpora.
    """

    def __init__(
        self,
        corpora: dict[str, Iterable[Sequence[str]]],
        order: int,
        vocab_size: int,
        jobs: int = 1,
        **kwargs,
    ):
        super().__init__(**kwargs)
        _check_order(order)
        self.corpora = corpora
        self.order = order
        self.vocab_size = vocab_size
        self.jobs = jobs
        self.vocab: frozenset[str] = frozenset()

    def __call__(self) -> dict[str, NGramModel]:
        names = list(self.corpora)
        corpora = [self.corpora[name] for name in names]
        # one-shot iterators are counted in this process, in a single pass
        jobs = 1 if any(isinstance(c, Iterator) for c in corpora) else self.jobs
        counted = fan_out(_count_corpus, [(c, self.order) for c in corpora], jobs=jobs)
        for name, counts in zip(names, counted):
            self.add_log(mod=name, act="count", msg=f"{len(counts.counts)} distinct n-grams")
        merged = NGramCounts(self.order)
        for counts in counted:
            merged = merged + counts
        self.vocab = vocab_select(merged, self.vocab_size)
        self.add_log(mod=None, act="vocab", msg=f"{len(self.vocab)} words")
        models = {}
        for name, counts in zip(names, counted):
            if not counts:
                raise EmptyCorpusError(f"Corpus {name} is empty")
            models[name] = estimate(counts, vocab=self.vocab)
            self.add_log(
                mod=name,
                act="estimate",
                msg=" ".join(f"{n}={c}" for n, c in models[name].counts_by_order().items()),
            )
        return models


def _count_corpus(args: tuple[Iterable[Sequence[str]], int]) -> NGramCounts:
    corpus, order = args
    return count_ngrams(corpus, order)
