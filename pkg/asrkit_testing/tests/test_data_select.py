import random

from django.test import SimpleTestCase

from asrkit.corpus_io import CtmEntry
from asrkit.corpus_io import read_text_corpus
from asrkit.data_select import REJECTED
from asrkit.data_select import RELAXED
from asrkit.data_select import STRICT
from asrkit.data_select import SelectionRecord
from asrkit.data_select import Selector
from asrkit.data_select import SystemDecode
from asrkit.data_select import Thresholds
from asrkit.data_select import build_biased_lm
from asrkit.data_select import caption_match
from asrkit.data_select import cross_system_agreement
from asrkit.data_select import select
from asrkit.exceptions import AgreementError
from asrkit.exceptions import ConfigError
from asrkit.exceptions import EmptyCaptionsError
from asrkit.exceptions import ThresholdOrderError
from asrkit.ngram_lm import count_ngrams
from asrkit.ngram_lm import estimate
from asrkit.ngram_lm import perplexity
from asrkit.synth import SynthGenerator
from asrkit_testing.testing import fixture


def read_corpus(name):
    with open(fixture(name)) as stream:
        return list(read_text_corpus(stream))


class AgreementTests(SimpleTestCase):
    def test_one_substitution_in_ten(self):
        caption = "a b c d e f g h i j".split()
        self.assertAlmostEqual(0.9, caption_match(caption, caption[:-1] + ["x"]))

    def test_identical(self):
        self.assertEqual(1.0, caption_match(["a", "b"], ["a", "b"]))
        self.assertEqual(1.0, cross_system_agreement([["a", "b"], ["a", "b"]]))

    def test_disjoint(self):
        self.assertEqual(0.0, caption_match(["a", "b"], ["c", "d"]))
        self.assertEqual(0.0, cross_system_agreement([["a", "b"], ["c", "d"]]))

    def test_clamped(self):
        self.assertEqual(0.0, caption_match(["a"], ["b", "c", "d", "e"]))

    def test_empty_caption(self):
        self.assertEqual(0.0, caption_match([], ["a"]))

    def test_pairs_averaged(self):
        hyps = [["a", "b"], ["a", "b"], ["c", "d"]]
        self.assertAlmostEqual(1 / 3, cross_system_agreement(hyps))

    def test_single_system(self):
        with self.assertRaises(AgreementError):
            cross_system_agreement([["a"]])


class ThresholdTests(SimpleTestCase):
    def _mk_one(self, agreement=1.0, match=1.0, confidences=None):
        if confidences is None:
            confidences = {"x": 0.95, "y": 0.92}
        return SelectionRecord("s", ("a",), {"x": ("a",), "y": ("a",)}, confidences, agreement, match)

    def test_missing_confidence_fails_closed(self):
        record = self._mk_one(confidences={"x": None, "y": 1.0})
        self.assertIsNone(record.min_confidence)
        self.assertFalse(Thresholds(0.5, 0.5, 0.1).passes(record))
        self.assertTrue(Thresholds(0.5, 0.5).passes(record))

    def test_min_confidence(self):
        self.assertEqual(0.92, self._mk_one().min_confidence)

    def test_order(self):
        with self.assertRaises(ThresholdOrderError):
            select([], Thresholds(0.5, 0.5), Thresholds(0.9, 0.9))
        with self.assertRaises(ThresholdOrderError):
            select([], Thresholds(0.9, 0.9), Thresholds(0.5, 0.5, 0.5))

    def test_range(self):
        with self.assertRaises(ConfigError):
            self._mk_one(agreement=1.2)

    def test_tiers(self):
        records = [self._mk_one(), self._mk_one(0.85, 0.9), self._mk_one(0.5, 1.0)]
        selection = select(records)
        self.assertEqual([STRICT, RELAXED, REJECTED], [r.decision for r in selection.records])
        self.assertEqual((2, 2), tuple(selection.summary[RELAXED]))
        self.assertEqual(2, len(selection.members(RELAXED)))


class SelectorTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.corpus = SynthGenerator(seed=7, segments=200, corrupt_fraction=0.3)()
        cls.selection = Selector(cls.corpus.captions, cls.corpus.systems)()

    def test_corrupted_captions_rejected(self):
        corrupted = {sid for sid, flag in self.corpus.corrupted.items() if flag}
        self.assertEqual(60, len(corrupted))
        strict = {r.segment_id for r in self.selection.members(STRICT)}
        self.assertGreaterEqual(len(corrupted - strict), 0.95 * len(corrupted))
        self.assertTrue(strict)

    def test_strict_inside_relaxed(self):
        strict = {r.segment_id for r in self.selection.members(STRICT)}
        relaxed = {r.segment_id for r in self.selection.members(RELAXED)}
        self.assertLessEqual(strict, relaxed)
        self.assertEqual(len(relaxed), self.selection.summary[RELAXED].segments)

    def test_record_per_segment(self):
        self.assertEqual(list(self.corpus.corrupted), [r.segment_id for r in self.selection.records])

    def test_monotone_in_thresholds(self):
        rng = random.Random(13)
        records = self.selection.records
        for _ in range(50):
            loose = Thresholds(rng.random(), rng.random(), rng.random())
            tight = Thresholds(
                loose.agreement + rng.random() * (1 - loose.agreement),
                loose.caption_match + rng.random() * (1 - loose.caption_match),
                loose.confidence + rng.random() * (1 - loose.confidence),
            )
            tight_ids = {r.segment_id for r in select(records, tight, tight).members(STRICT)}
            loose_ids = {r.segment_id for r in select(records, loose, loose).members(STRICT)}
            self.assertLessEqual(tight_ids, loose_ids)
            both = select(records, tight, loose)
            self.assertLessEqual(
                {r.segment_id for r in both.members(STRICT)},
                {r.segment_id for r in both.members(RELAXED)},
            )

    def test_log(self):
        selector = Selector(self.corpus.captions[:20], self.corpus.systems, logging_enabled=True)
        selector()
        self.assertEqual([("select", "collect"), ("select", STRICT), ("select", RELAXED), ("select", REJECTED)],
                         [(e["mod"], e["act"]) for e in selector.log])

    def test_jobs(self):
        captions = self.corpus.captions[:40]
        one = Selector(captions, self.corpus.systems, jobs=1)()
        two = Selector(captions, self.corpus.systems, jobs=2)()
        self.assertEqual(one.records, two.records)

    def test_one_system(self):
        with self.assertRaises(AgreementError):
            Selector(self.corpus.captions, {"sys1": self.corpus.systems["sys1"]})

    def test_threshold_order(self):
        with self.assertRaises(ThresholdOrderError):
            Selector(self.corpus.captions, self.corpus.systems, strict=Thresholds(0.1, 0.1))

    def test_segment_text_captions(self):
        captions = {"seg1": ["Good", "evening"], "seg2": ["a", "b", "c"]}
        systems = {
            "x": [CtmEntry("seg1", "1", 0.0, 0.1, "good", 0.99), CtmEntry("seg1", "1", 0.2, 0.1, "evening", 0.99)],
            "y": [CtmEntry("seg1", "1", 0.0, 0.1, "good", 0.95), CtmEntry("seg1", "1", 0.2, 0.1, "evening", 0.93)],
        }
        selection = Selector(captions, systems)()
        self.assertEqual([STRICT, REJECTED], [r.decision for r in selection.records])
        self.assertEqual(("good", "evening"), selection.records[0].caption)
        self.assertEqual({"x": None, "y": None}, selection.records[1].confidences)


class SystemDecodeTests(SimpleTestCase):
    def test_mean(self):
        self.assertAlmostEqual(0.5, SystemDecode(["a", "b"], [0.4, 0.6]).mean_confidence())

    def test_no_estimate(self):
        self.assertIsNone(SystemDecode(["a"], [None]).mean_confidence())
        self.assertIsNone(SystemDecode().mean_confidence())


class BiasedLmTests(SimpleTestCase):
    def setUp(self):
        self.captions = read_corpus("train_a.txt")
        self.background = estimate(count_ngrams(read_corpus("train_b.txt"), 2))

    def test_default_weights(self):
        lm = build_biased_lm(self.captions, self.background)
        self.assertAlmostEqual(0.9, lm.weights[0])
        self.assertAlmostEqual(0.1, lm.weights[1])
        self.assertIs(self.background, lm.components[1])
        self.assertEqual(2, lm.components[0].order)

    def test_full_bias_is_the_caption_model(self):
        lm = build_biased_lm(self.captions, self.background, bias_weight=1.0)
        caption_model = estimate(count_ngrams(self.captions, 2))
        self.assertAlmostEqual(perplexity(caption_model, self.captions), perplexity(lm, self.captions), places=9)

    def test_lower_perplexity_on_captions(self):
        lm = build_biased_lm(self.captions, self.background)
        self.assertLess(perplexity(lm, self.captions), perplexity(self.background, self.captions))

    def test_no_captions(self):
        with self.assertRaises(EmptyCaptionsError):
            build_biased_lm([[], []], self.background)

    def test_weight_range(self):
        with self.assertRaises(ConfigError):
            build_biased_lm(self.captions, self.background, bias_weight=0.0)
