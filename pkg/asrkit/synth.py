"""
Seeded synthetic corpus: reference and caption STMs, several decodes as CTMs,
LM training text and n-best lists. The generator knows which captions it
corrupted, so selection can be checked against the truth.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from dataclasses import field
from math import ceil
from typing import Sequence

import numpy as np

from asrkit.core import BaseJob
from asrkit.corpus_io import CtmEntry
from asrkit.corpus_io import NBestEntry
from asrkit.corpus_io import StmSegment
from asrkit.corpus_io import write_ctm
from asrkit.corpus_io import write_nbest
from asrkit.corpus_io import write_side_scores
from asrkit.corpus_io import write_stm
from asrkit.corpus_io import write_tsv
from asrkit.exceptions import ConfigError
from asrkit.utils import StagedOutputs

WORD_CS = 40
WORD_DUR_CS = 30
SIDE_MODELS = ("lstm1", "ffnn")


@dataclass
class SynthCorpus:
    ref: list[StmSegment] = field(default_factory=list)
    captions: list[StmSegment] = field(default_factory=list)
    systems: dict[str, list[CtmEntry]] = field(default_factory=dict)
    corrupted: dict[str, bool] = field(default_factory=dict)
    lm_train: list[list[str]] = field(default_factory=list)
    heldout: list[list[str]] = field(default_factory=list)
    nbest: dict[str, list[NBestEntry]] = field(default_factory=dict)

    @property
    def n_ref_words(self) -> int:
        return sum(len(s.tokens) for s in self.ref)

    def write(self, out_dir: str) -> list[str]:
        """
        Write every artifact into out_dir, returning the file names.
        """
        os.makedirs(out_dir, exist_ok=True)
        written = []
        with StagedOutputs() as outputs:

            def target(name):
                written.append(name)
                return outputs.open(os.path.join(out_dir, name))

            with target("ref.stm") as stream:
                write_stm(self.ref, stream)
            with target("captions.stm") as stream:
                write_stm(self.captions, stream)
            for i, (name, entries) in enumerate(self.systems.items(), start=1):
                with target(f"sys{i}.ctm") as stream:
                    write_ctm(entries, stream)
            with target("truth.tsv") as stream:
                write_tsv(
                    ((sid, int(flag)) for sid, flag in self.corrupted.items()),
                    stream,
                    header=("segment_id", "corrupted"),
                )
            for name, sentences in (("lm_train.txt", self.lm_train), ("heldout.txt", self.heldout)):
                with target(name) as stream:
                    stream.writelines(" ".join(words) + "\n" for words in sentences)
            with target("nbest.txt") as stream:
                write_nbest(self.nbest, stream)
            for model in SIDE_MODELS:
                with target(f"nbest.{model}.tsv") as stream:
                    write_side_scores(self.nbest, model, stream)
        return written


class SynthGenerator(BaseJob):
    """
    Words are drawn from a Zipf-like distribution over a fixed vocabulary.
    Corrupted captions replace max(3, ceil(0.3 * L)) words with words that never
    occur anywhere else, so their caption match can't exceed 0.7.
    """

    def __init__(
        self,
        seed: int,
        recordings: int = 4,
        segments: int = 200,
        min_len: int = 6,
        max_len: int = 20,
        vocab_size: int = 300,
        corrupt_fraction: float = 0.3,
        error_rates: Sequence[float] = (0.04, 0.06, 0.08),
        lm_sentences: int = 2000,
        heldout_sentences: int = 200,
        nbest_utterances: int = 50,
        nbest_size: int = 5,
        **kwargs,
    ):
        super().__init__(**kwargs)
        if seed is None:
            raise ConfigError("A seed is required to generate data")
        if not 0.0 <= corrupt_fraction <= 1.0:
            raise ConfigError(f"corrupt_fraction must be in [0, 1], got {corrupt_fraction}")
        if not 1 <= min_len <= max_len:
            raise ConfigError(f"Bad segment length range {min_len}..{max_len}")
        if len(error_rates) < 2:
            raise ConfigError("At least 2 systems are needed")
        self.seed = seed
        self.recordings = recordings
        self.segments = segments
        self.min_len = min_len
        self.max_len = max_len
        self.corrupt_fraction = corrupt_fraction
        self.error_rates = tuple(error_rates)
        self.lm_sentences = lm_sentences
        self.heldout_sentences = heldout_sentences
        self.nbest_utterances = nbest_utterances
        self.nbest_size = nbest_size
        self.vocab = [f"w{i:04d}" for i in range(vocab_size)]
        weights = 1.0 / np.arange(1, vocab_size + 1)
        self.word_p = weights / weights.sum()
        self.rng = np.random.default_rng(seed)
        self._fresh = 0

    def _words(self, n: int) -> list[str]:
        return [self.vocab[i] for i in self.rng.choice(len(self.vocab), size=n, p=self.word_p)]

    def _other_word(self, word: str) -> str:
        while True:
            candidate = self.vocab[int(self.rng.integers(len(self.vocab)))]
            if candidate != word:
                return candidate

    def _fresh_word(self) -> str:
        self._fresh += 1
        return f"cap{self._fresh:05d}"

    def _segments(self, corpus: SynthCorpus):
        n_corrupt = round(self.corrupt_fraction * self.segments)
        corrupt_set = set(int(i) for i in self.rng.choice(self.segments, n_corrupt, replace=False))
        per_recording = ceil(self.segments / self.recordings)
        clock: dict[str, int] = {}
        for index in range(self.segments):
            recording = f"show{index // per_recording + 1:02d}"
            speaker = f"{recording}_spk{int(self.rng.integers(1, 4))}"
            start = clock.get(recording, 0)
            length = int(self.rng.integers(self.min_len, self.max_len + 1))
            end = start + length * WORD_CS + 20
            clock[recording] = end + 50
            words = self._words(length)
            ref = StmSegment(recording, "1", speaker, start / 100, end / 100, tokens=tuple(words))
            corpus.ref.append(ref)
            caption = list(words)
            corrupted = index in corrupt_set
            if corrupted:
                k = min(length, max(3, ceil(0.3 * length)))
                for position in self.rng.choice(length, k, replace=False):
                    caption[int(position)] = self._fresh_word()
            corpus.captions.append(
                StmSegment(recording, "1", speaker, start / 100, end / 100, tokens=tuple(caption))
            )
            corpus.corrupted[ref.segment_id] = corrupted
            for name, rate in zip(corpus.systems, self.error_rates):
                corpus.systems[name].extend(self._decode(recording, start, words, rate))

    def _decode(self, recording: str, start: int, words: list[str], rate: float) -> list[CtmEntry]:
        rng = self.rng
        result = []
        for i, word in enumerate(words):
            tbeg = start + 10 + i * WORD_CS
            draw = rng.random()
            if draw < 0.25 * rate:
                continue
            if draw < 0.85 * rate:
                conf = round(float(rng.uniform(0.3, 0.7)), 3)
                result.append(
                    CtmEntry(recording, "1", tbeg / 100, WORD_DUR_CS / 100, self._other_word(word), conf)
                )
            else:
                conf = round(float(rng.uniform(0.9, 1.0)), 3)
                result.append(CtmEntry(recording, "1", tbeg / 100, WORD_DUR_CS / 100, word, conf))
            if draw >= rate and rng.random() < 0.15 * rate:
                conf = round(float(rng.uniform(0.2, 0.6)), 3)
                result.append(
                    CtmEntry(
                        recording,
                        "1",
                        (tbeg + WORD_DUR_CS + 1) / 100,
                        0.05,
                        self._words(1)[0],
                        conf,
                    )
                )
        return result

    def _nbest(self, corpus: SynthCorpus):
        rng = self.rng
        for u in range(self.nbest_utterances):
            utterance_id = f"utt{u + 1:04d}"
            truth = self._words(int(rng.integers(self.min_len, self.max_len + 1)))
            hypotheses = {tuple(truth)}
            while len(hypotheses) < self.nbest_size:
                variant = list(truth)
                for _ in range(int(rng.integers(1, 4))):
                    position = int(rng.integers(len(variant)))
                    variant[position] = self._other_word(variant[position])
                hypotheses.add(tuple(variant))
            scored = []
            for words in sorted(hypotheses):
                am = round(float(-10.0 * len(words) - rng.gamma(2.0, 3.0)), 3)
                lm = round(float(-2.5 * len(words) - rng.gamma(2.0, 2.0)), 3)
                extra = {
                    model: round(float(lm + rng.normal(0.0, 1.5)), 3) for model in SIDE_MODELS
                }
                scored.append((am + lm, words, am, lm, extra))
            scored.sort(key=lambda item: (-item[0], item[1]))
            corpus.nbest[utterance_id] = [
                NBestEntry(utterance_id, rank, am, lm, words, extra)
                for rank, (_, words, am, lm, extra) in enumerate(scored, start=1)
            ]

    def __call__(self) -> SynthCorpus:
        corpus = SynthCorpus(systems={f"sys{i}": [] for i in range(1, len(self.error_rates) + 1)})
        self._segments(corpus)
        self.add_log(
            mod="synth",
            act="segments",
            msg=f"{len(corpus.ref)} segments, {sum(corpus.corrupted.values())} corrupted",
        )
        corpus.lm_train = [
            self._words(int(self.rng.integers(self.min_len, self.max_len + 1)))
            for _ in range(self.lm_sentences)
        ]
        corpus.heldout = [
            self._words(int(self.rng.integers(self.min_len, self.max_len + 1)))
            for _ in range(self.heldout_sentences)
        ]
        self._nbest(corpus)
        self.add_log(mod="synth", act="nbest", msg=f"{len(corpus.nbest)} utterances")
        return corpus
