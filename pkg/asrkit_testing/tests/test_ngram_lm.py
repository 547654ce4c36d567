import random
from collections import Counter
from math import log10

import numpy as np
from django.test import SimpleTestCase

from asrkit.corpus_io import read_text_corpus
from asrkit.exceptions import ConfigError
from asrkit.exceptions import DegenerateComponentError
from asrkit.exceptions import EmptyCorpusError
from asrkit.exceptions import InputError
from asrkit.exceptions import OrderRangeError
from asrkit.ngram_lm import BOS
from asrkit.ngram_lm import EOS
from asrkit.ngram_lm import UNK
from asrkit.ngram_lm import InterpolatedLm
from asrkit.ngram_lm import LmTrainer
from asrkit.ngram_lm import NGramCounts
from asrkit.ngram_lm import count_ngrams
from asrkit.ngram_lm import em_step
from asrkit.ngram_lm import estimate
from asrkit.ngram_lm import event_matrix
from asrkit.ngram_lm import perplexity
from asrkit.ngram_lm import perplexity_stats
from asrkit.ngram_lm import tune_matrix_em
from asrkit.ngram_lm import tune_weights_em
from asrkit.ngram_lm import vocab_select
from asrkit.textnorm import TextCorpus
from asrkit_testing.testing import fixture


def read_corpus(name):
    with open(fixture(name)) as stream:
        return list(read_text_corpus(stream))


def random_corpus(rng: random.Random, vocab="abcdef", sentences=30, max_len=8):
    return [[rng.choice(vocab) for _ in range(rng.randint(0, max_len))] for _ in range(sentences)]


class WittenBellBigram:
    """
    Direct Witten-Bell bigram probabilities from raw counts.
    """

    def __init__(self, sentences):
        self.unigrams = Counter()
        self.followers = {}
        for words in sentences:
            tokens = [BOS, *words, EOS]
            self.unigrams.update(tokens[1:])
            for h, w in zip(tokens, tokens[1:]):
                self.followers.setdefault(h, Counter())[w] += 1
        self.predicted = set(self.unigrams) | {EOS, UNK}
        self.unseen = self.predicted - set(self.unigrams)

    def p1(self, w):
        total = sum(self.unigrams.values())
        seen = len(self.unigrams)
        if w in self.unigrams:
            return self.unigrams[w] / (total + seen)
        return seen / (total + seen) / len(self.unseen)

    def p(self, h, w):
        w = w if w in self.predicted else UNK
        h = h if h in self.predicted or h == BOS else UNK
        followers = self.followers.get(h)
        if not followers:
            return self.p1(w)
        n_tokens = sum(followers.values())
        n_types = len(followers)
        if w in followers:
            return followers[w] / (n_tokens + n_types)
        alpha = n_types / (n_tokens + n_types) / (1 - sum(self.p1(f) for f in followers))
        return alpha * self.p1(w)

    def perplexity(self, sentences):
        total = 0.0
        tokens = 0
        for words in sentences:
            history = [BOS, *words]
            for h, w in zip(history, [*words, EOS]):
                total += log10(self.p(h, w))
                tokens += 1
        return 10 ** (-total / tokens)


class CountTests(SimpleTestCase):
    def test_padding(self):
        counts = count_ngrams([["a", "b"]], 3)
        self.assertEqual(
            Counter(
                {
                    ("a",): 1,
                    ("b",): 1,
                    (EOS,): 1,
                    (BOS, "a"): 1,
                    ("a", "b"): 1,
                    ("b", EOS): 1,
                    (BOS, "a", "b"): 1,
                    ("a", "b", EOS): 1,
                }
            ),
            counts.counts,
        )

    def test_empty_sentence(self):
        self.assertEqual(Counter({(EOS,): 1, (BOS, EOS): 1}), count_ngrams([[]], 2).counts)

    def test_linear(self):
        rng = random.Random(11)
        for _ in range(20):
            a, b = random_corpus(rng), random_corpus(rng)
            self.assertEqual(count_ngrams(a + b, 3), count_ngrams(a, 3) + count_ngrams(b, 3))

    def test_generator_input(self):
        corpus = (["a"] for _ in range(3))
        self.assertEqual(3, count_ngrams(corpus, 1).counts[("a",)])

    def test_order_range(self):
        with self.assertRaises(OrderRangeError):
            NGramCounts(7)
        with self.assertRaises(OrderRangeError):
            count_ngrams([["a"]], 0)

    def test_merge_orders(self):
        with self.assertRaises(OrderRangeError):
            count_ngrams([["a"]], 1) + count_ngrams([["a"]], 2)


class VocabSelectTests(SimpleTestCase):
    def test_markers_excluded(self):
        counts = count_ngrams([["a", "b"], ["a"]], 2)
        self.assertEqual(frozenset({"a", "b"}), vocab_select(counts, 5))
        self.assertEqual(frozenset({"a"}), vocab_select(counts, 1))

    def test_size(self):
        with self.assertRaises(InputError):
            vocab_select({"a": 1}, 0)


class EstimateTests(SimpleTestCase):
    def test_hand_values(self):
        model = estimate(count_ngrams([["a", "b", "a", "b"]], 2))
        self.assertAlmostEqual(2 / 3, 10 ** model.logprob(["a"], "b"), places=9)
        self.assertAlmostEqual(1 / 9, 10 ** model.logprob(["a"], "a"), places=9)
        self.assertAlmostEqual(3 / 8, 10 ** model.logprob([], UNK), places=9)
        self.assertAlmostEqual(3 / 8, 10 ** model.logprob([], "zebra"), places=9)

    def test_distributions_sum_to_one(self):
        rng = random.Random(21)
        for index in range(20):
            order = 1 + index % 4
            model = estimate(count_ngrams(random_corpus(rng), order))
            self.assertAlmostEqual(1.0, model.context_mass(()), places=6)
            for context in model.contexts():
                self.assertAlmostEqual(1.0, model.context_mass(context), places=6, msg=context)

    def test_normalized_with_vocab(self):
        rng = random.Random(22)
        corpus = random_corpus(rng, vocab="abcdefghij")
        model = estimate(count_ngrams(corpus, 3), vocab={"a", "b", "c", "z"})
        self.assertEqual(frozenset({"a", "b", "c", "z", BOS, EOS, UNK}), model.vocab)
        for context in [(), *model.contexts()]:
            self.assertAlmostEqual(1.0, model.context_mass(context), places=6)

    def test_matches_direct_formula(self):
        train = [["a", "b", "a"], ["b", "c"], ["a", "c", "c"]]
        model = estimate(count_ngrams(train, 2))
        oracle = WittenBellBigram(train)
        for h in [BOS, "a", "b", "c", "d"]:
            for w in ["a", "b", "c", "d", EOS]:
                self.assertAlmostEqual(log10(oracle.p(h, w)), model.logprob([BOS, h], w), places=9)

    def test_empty(self):
        with self.assertRaises(EmptyCorpusError):
            estimate(count_ngrams([], 2))

    def test_unknown_smoothing(self):
        with self.assertRaises(ConfigError):
            estimate(count_ngrams([["a"]], 1), smoothing="kneser-ney")

    def test_counts_by_order(self):
        model = estimate(count_ngrams([["a", "b"]], 2))
        self.assertEqual({1: 5, 2: 3}, model.counts_by_order())


class PerplexityTests(SimpleTestCase):
    def test_against_direct_formula(self):
        train = [["a", "b", "a"], ["b", "c"]]
        test = [["a", "c"], ["b", "b", "a"], ["d"]]
        model = estimate(count_ngrams(train, 2))
        expected = WittenBellBigram(train).perplexity(test)
        self.assertLess(abs(expected - perplexity(model, test)), 1e-9 * expected)

    def test_stats(self):
        model = estimate(count_ngrams([["a", "b"]], 2))
        stats = perplexity_stats(model, [["a", "x"], []])
        self.assertEqual((2, 4, 1), (stats.sentences, stats.tokens, stats.oovs))
        self.assertAlmostEqual(10 ** (-stats.logprob / 4), stats.perplexity)

    def test_memorized_text(self):
        sentence = "the cat sat on the mat".split()
        model = estimate(count_ngrams([sentence] * 50, 3))
        self.assertLessEqual(perplexity(model, [sentence]), 1.1)

    def test_no_text(self):
        model = estimate(count_ngrams([["a"]], 1))
        with self.assertRaises(EmptyCorpusError):
            perplexity(model, [])


class InterpolationTests(SimpleTestCase):
    def setUp(self):
        self.a = estimate(count_ngrams(read_corpus("train_a.txt"), 2))
        self.b = estimate(count_ngrams(read_corpus("train_b.txt"), 2))

    def test_single_weight_is_the_component(self):
        heldout = read_corpus("heldout.txt")
        mixed = InterpolatedLm([self.a, self.b], [1.0, 0.0])
        self.assertAlmostEqual(perplexity(self.a, heldout), perplexity(mixed, heldout), places=9)

    def test_between_components(self):
        rng = random.Random(4)
        words = sorted((self.a.vocab | self.b.vocab) - {BOS})
        mixed = InterpolatedLm([self.a, self.b], [0.3, 0.7])
        for _ in range(200):
            context = [rng.choice(words) for _ in range(2)]
            word = rng.choice(words)
            values = [self.a.logprob(context, word), self.b.logprob(context, word)]
            value = mixed.logprob(context, word)
            self.assertLessEqual(min(values) - 1e-12, value)
            self.assertLessEqual(value, max(values) + 1e-12)

    def test_bad_weights(self):
        for weights in ([0.5, 0.6], [1.5, -0.5], [1.0]):
            with self.assertRaises(ConfigError):
                InterpolatedLm([self.a, self.b], weights)


class EmTests(SimpleTestCase):
    def test_first_step(self):
        step = em_step(np.array([[0.2, 0.4], [0.6, 0.2]]), [0.5, 0.5])
        np.testing.assert_allclose([[1 / 3, 2 / 3], [0.75, 0.25]], step.responsibilities)
        np.testing.assert_allclose([(1 / 3 + 0.75) / 2, (2 / 3 + 0.25) / 2], step.weights)
        self.assertAlmostEqual(log10(0.3) + log10(0.4), step.loglik)

    def test_likelihood_never_drops(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            k = int(rng.integers(2, 5))
            matrix = rng.uniform(1e-4, 1.0, size=(int(rng.integers(5, 40)), k))
            result = tune_matrix_em(matrix, max_iters=50, tol=0)
            self.assertTrue(all(b >= a - 1e-9 for a, b in zip(result.history, result.history[1:])))
            self.assertAlmostEqual(1.0, sum(result.weights))

    def test_separable(self):
        matrix = np.array([[0.9, 0.1], [0.8, 0.2]] * 10)
        result = tune_matrix_em(matrix, max_iters=20)
        self.assertGreaterEqual(result.weights[0], 0.9)
        self.assertLessEqual(len(result.history), 21)

    def test_identical_components(self):
        matrix = np.tile(np.array([[0.2], [0.5], [0.05]]), (1, 3))
        result = tune_matrix_em(matrix)
        np.testing.assert_allclose([1 / 3] * 3, result.weights)
        self.assertAlmostEqual(result.history[0], result.history[-1])

    def test_degenerate_component(self):
        matrix = np.array([[0.2, 0.0], [0.5, 0.0]])
        with self.assertRaises(DegenerateComponentError) as cm:
            tune_matrix_em(matrix)
        self.assertEqual(1, cm.exception.index)

    def test_fixture_corpora(self):
        trainer = LmTrainer(
            {"a": read_corpus("train_a.txt"), "b": read_corpus("train_b.txt")},
            order=2,
            vocab_size=100,
        )
        models = trainer()
        heldout = read_corpus("heldout.txt")
        self.assertEqual((15, 2), event_matrix(list(models.values()), heldout).shape)
        result = tune_weights_em(list(models.values()), heldout)
        self.assertGreater(result.weights[0], result.weights[1])
        self.assertGreaterEqual(result.history[-1], result.history[0])

    def test_needs_two(self):
        model = estimate(count_ngrams([["a"]], 1))
        with self.assertRaises(InputError):
            tune_weights_em([model], [["a"]])


class LmTrainerTests(SimpleTestCase):
    def _mk_one(self, **kwargs):
        corpora = {"a": read_corpus("train_a.txt"), "b": read_corpus("train_b.txt")}
        return LmTrainer(corpora, **kwargs)

    def test_shared_vocabulary(self):
        trainer = self._mk_one(order=3, vocab_size=5, logging_enabled=True)
        models = trainer()
        self.assertEqual(5, len(trainer.vocab))
        for model in models.values():
            self.assertEqual(trainer.vocab | {BOS, EOS, UNK}, model.vocab)
        self.assertEqual(
            ["count", "count", "vocab", "estimate", "estimate"],
            [entry["act"] for entry in trainer.log],
        )

    def test_empty_corpus(self):
        trainer = LmTrainer({"a": read_corpus("train_a.txt"), "empty": []}, order=2, vocab_size=10)
        with self.assertRaises(EmptyCorpusError):
            trainer()

    def test_jobs(self):
        one = self._mk_one(order=2, vocab_size=50, jobs=1)()
        two = self._mk_one(order=2, vocab_size=50, jobs=2)()
        self.assertEqual(one, two)

    def test_generator_read_in_one_pass(self):
        pulled = []

        def stream(sentences):
            buffer = []
            for words in sentences:
                pulled.append(words)
                buffer[:] = words
                yield buffer

        sentences = read_corpus("train_a.txt")
        expected = LmTrainer({"a": sentences}, order=2, vocab_size=50)()
        streamed = LmTrainer({"a": stream(sentences)}, order=2, vocab_size=50, jobs=2)()
        self.assertEqual(expected, streamed)
        self.assertEqual(len(sentences), len(pulled))

    def test_text_corpus_in_workers(self):
        corpora = {"a": TextCorpus(fixture("train_a.txt")), "b": TextCorpus(fixture("train_b.txt"))}
        one = LmTrainer(corpora, order=2, vocab_size=50, jobs=1)()
        two = LmTrainer(corpora, order=2, vocab_size=50, jobs=2)()
        self.assertEqual(one, two)
