import random
import time
from collections import Counter
from decimal import Decimal
from fractions import Fraction

from django.test import SimpleTestCase

from asrkit.aligner import UNIT_COSTS
from asrkit.corpus_io import CtmEntry
from asrkit.corpus_io import StmSegment
from asrkit.corpus_io import parse_ctm
from asrkit.corpus_io import parse_stm
from asrkit.exceptions import IncomparableReportsError
from asrkit.exceptions import InputError
from asrkit.exceptions import NoScoredWordsError
from asrkit.exceptions import ReportError
from asrkit.exceptions import RulesConflictError
from asrkit.scorer import ConfusionTable
from asrkit.scorer import Scorer
from asrkit.scorer import WerReport
from asrkit.scorer import compare_systems
from asrkit.scorer import error_breakdown
from asrkit.scorer import error_overlap
from asrkit.scorer import hesitation_ablation
from asrkit.scorer import ranked_confusions
from asrkit.scorer import score
from asrkit.scorer import top_errors
from asrkit.textnorm import NormRules
from asrkit.utils import display_rate
from asrkit_testing.testing import fixture


def load_sample(ctm="sample.ctm"):
    with open(fixture("sample.stm")) as stream:
        stm = parse_stm(stream)
    with open(fixture(ctm)) as stream:
        return stm, parse_ctm(stream)


def synthetic_show(rng: random.Random, segments: int, recordings: int = 4, error_rate: float = 0.08):
    """
    Reference segments of about 16 words and a decode with errors at error_rate.
    """
    vocab = [f"w{i}" for i in range(500)]
    stm = []
    ctm = []
    per_recording = -(-segments // recordings)
    clock = {}
    for index in range(segments):
        recording = f"show{index // per_recording}"
        start = clock.get(recording, 0)
        words = [rng.choice(vocab) for _ in range(rng.randint(10, 22))]
        end = start + 40 * len(words) + 20
        clock[recording] = end + 50
        stm.append(
            StmSegment(recording, "1", f"spk{index % 7}", start / 100, end / 100, tokens=tuple(words))
        )
        for i, word in enumerate(words):
            tbeg = (start + 10 + 40 * i) / 100
            draw = rng.random()
            if draw < error_rate / 3:
                continue
            if draw < 2 * error_rate / 3:
                word = rng.choice(vocab)
            ctm.append(CtmEntry(recording, "1", tbeg, 0.3, word, 0.9))
            if draw > 1 - error_rate / 3:
                ctm.append(CtmEntry(recording, "1", tbeg + 0.31, 0.05, rng.choice(vocab), 0.5))
    return stm, ctm


class WerReportTests(SimpleTestCase):
    def test_table_five_arithmetic(self):
        report = WerReport(matches=1000 - 32 - 22, subs=32, dels=22, inss=11)
        self.assertEqual(1000, report.n_ref)
        self.assertEqual(
            {
                "sub_rate": Decimal("3.2"),
                "del_rate": Decimal("2.2"),
                "ins_rate": Decimal("1.1"),
                "wer": Decimal("6.5"),
            },
            report.displayed(),
        )
        self.assertEqual(Fraction(65, 10), report.wer)
        self.assertEqual(report.wer, report.sub_rate + report.del_rate + report.ins_rate)

    def test_displayed_rates_add_up(self):
        rng = random.Random(3)
        for _ in range(1000):
            n_ref = rng.randint(1, 5000)
            subs = rng.randint(0, n_ref)
            dels = rng.randint(0, n_ref - subs)
            report = WerReport(matches=n_ref - subs - dels, subs=subs, dels=dels, inss=rng.randint(0, 2 * n_ref))
            shown = report.displayed()
            total = shown["sub_rate"] + shown["del_rate"] + shown["ins_rate"]
            self.assertLessEqual(abs(total - shown["wer"]), Decimal("0.1"))
            self.assertEqual(report.wer, report.sub_rate + report.del_rate + report.ins_rate)

    def test_undefined(self):
        with self.assertRaises(NoScoredWordsError):
            WerReport(inss=3).wer

    def test_merge_associative(self):
        a = WerReport(1, 2, 3, 4, per_speaker={"x": WerReport(1, 2, 3, 4)})
        b = WerReport(5, 0, 1, 0, per_speaker={"y": WerReport(5, 0, 1, 0)})
        c = WerReport(2, 2, 0, 1, per_speaker={"x": WerReport(2, 2, 0, 1)})
        self.assertEqual((a + b) + c, a + (b + c))
        self.assertEqual(a + b, b + a)
        self.assertEqual(WerReport(3, 4, 3, 5), ((a + b) + c).per_speaker["x"])


class ScoreFixtureTests(SimpleTestCase):
    def test_counts(self):
        report, confusions = score(*load_sample())
        self.assertEqual((10, 2, 1, 1), (report.matches, report.subs, report.dels, report.inss))
        self.assertEqual(13, report.n_ref)
        self.assertEqual(1, report.n_unassigned)
        self.assertEqual(Decimal("30.8"), report.displayed()["wer"])
        self.assertEqual((2, 1, 1), confusions.totals())
        self.assertEqual(Counter({("everyone", "everybody"): 1, ("the", "a"): 1}), confusions.substitutions)
        self.assertEqual(Counter({"%hesitation": 1}), confusions.deletions)
        self.assertEqual(Counter({"yeah": 1}), confusions.insertions)

    def test_per_speaker(self):
        report, _ = score(*load_sample())
        self.assertEqual(3, report.per_speaker["spkA"].n_ref)
        self.assertEqual(10, report.per_speaker["spkB"].n_ref)
        self.assertEqual(1, report.per_speaker["spkA"].subs)
        self.assertEqual(report.errors, report.per_show["CNN"].errors)

    def test_optional_hesitation(self):
        report, _ = score(*load_sample(), NormRules(optional_hesitation=True))
        self.assertEqual((0, 1), (report.dels, report.optional_dels))
        self.assertEqual(12, report.n_ref)

    def test_identical(self):
        stm, _ = load_sample()
        ctm = []
        for segment in stm:
            step = (segment.tend - segment.tbeg) / (len(segment.tokens) + 1)
            for i, word in enumerate(segment.tokens):
                ctm.append(CtmEntry(segment.recording_id, segment.channel, segment.tbeg + i * step, step / 2, word))
        report, _ = score(stm, ctm)
        self.assertEqual(Decimal("0.0"), report.displayed()["wer"])

    def test_empty_ctm(self):
        stm = [StmSegment("r", "1", "s", 0.0, 100.0, tokens=tuple(f"w{i}" for i in range(100)))]
        report, confusions = score(stm, [])
        self.assertEqual(100, report.dels)
        self.assertEqual(Decimal("100.0"), report.displayed()["wer"])
        self.assertEqual((0, 100, 0), confusions.totals())

    def test_nothing_to_score(self):
        stm = [
            StmSegment("r", "1", "s", 0.0, 1.0, scorable=False),
            StmSegment("r", "1", "s", 1.0, 2.0, tokens=("<breath>",)),
        ]
        with self.assertRaises(NoScoredWordsError):
            score(stm, [CtmEntry("r", "1", 1.2, 0.1, "hi")])

    def test_costs_do_not_change_rates_here(self):
        report, _ = score(*load_sample(), costs=UNIT_COSTS)
        self.assertEqual(4, report.errors)

    def test_log(self):
        stm, ctm = load_sample()
        scorer = Scorer(stm, ctm, logging_enabled=True)
        scorer()
        self.assertEqual(["map", "align", "merge"], [entry["act"] for entry in scorer.log])

    def test_keep_alignments(self):
        stm, ctm = load_sample()
        result = Scorer(stm, ctm, keep_alignments=True)()
        self.assertEqual(3, len(result.alignments))
        self.assertEqual("CNN-1-0000000-0000300", result.alignments[0].segment.segment_id)


class ScoreSyntheticTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.stm, cls.ctm = synthetic_show(random.Random(2024), 2500)

    def test_confusion_totals_match_counts(self):
        report, confusions = score(self.stm[:300], self.ctm)
        self.assertEqual((report.subs, report.dels, report.inss), confusions.totals())

    def test_partition_merge(self):
        stm, ctm = self.stm[::6], self.ctm
        whole, _ = score(stm, ctm)
        merged = WerReport()
        for recording in sorted({s.recording_id for s in stm}):
            part, _ = score(
                [s for s in stm if s.recording_id == recording],
                [e for e in ctm if e.recording_id == recording],
            )
            merged = merged + part
        self.assertEqual(whole, merged)

    def test_throughput(self):
        self.assertGreater(len(self.ctm), 35000)
        started = time.perf_counter()
        score(self.stm, self.ctm, jobs=1)
        self.assertLess(time.perf_counter() - started, 2.0)

    def test_jobs_determinism(self):
        one = score(self.stm, self.ctm, jobs=1)
        four = score(self.stm, self.ctm, jobs=4)
        self.assertEqual(one, four)


class TopErrorsTests(SimpleTestCase):
    def test_table_six_line(self):
        table = ConfusionTable(
            Counter({("the", "a"): 21, ("and", "in"): 16, ("a", "the"): 16}),
            Counter({"and": 92, "the": 69}),
        )
        errors = top_errors(table, 10)
        self.assertEqual("21: the / a", errors.substitutions[0])
        self.assertEqual(["21: the / a", "16: a / the", "16: and / in"], errors.substitutions)
        self.assertEqual("92: and", errors.deletions[0])

    def test_k_limits(self):
        table = ConfusionTable(insertions=Counter({"a": 3, "b": 2, "c": 1}))
        self.assertEqual(["3: a", "2: b"], top_errors(table, 2).insertions)

    def test_k_positive(self):
        with self.assertRaises(InputError):
            ranked_confusions(ConfusionTable(), 0)

    def test_breakdown(self):
        breakdown = error_breakdown(
            {"human": WerReport(964, 20, 16, 8), "asr": WerReport(946, 32, 22, 11)}
        )
        self.assertEqual({"human": Decimal("2.0"), "asr": Decimal("3.2")}, breakdown["Sub"])
        self.assertEqual(["Sub", "Del", "Ins", "All"], list(breakdown))


class ErrorOverlapTests(SimpleTestCase):
    def setUp(self):
        self.human = ConfusionTable(
            Counter({("the", "a"): 6, ("and", "in"): 3, ("is", "was"): 1}),
            Counter({"and": 5, "the": 3, "i": 2}),
            Counter({"uh": 4}),
        )
        self.asr = ConfusionTable(
            Counter({("the", "a"): 2, ("is", "was"): 2, ("an", "and"): 4}),
            Counter({"the": 6, "a": 3, "and": 1}),
            Counter(),
        )

    def test_substitutions(self):
        # "is / was" wins the tie with "the / a" for second place in the asr list
        self.assertEqual([], error_overlap(self.human, self.asr, "substitutions", 2).shared)
        overlap = error_overlap(self.human, self.asr, "substitutions", 3)
        self.assertEqual(["the / a", "is / was"], overlap.shared)
        self.assertEqual(Fraction(7, 10), overlap.share_a)
        self.assertEqual(Fraction(4, 8), overlap.share_b)

    def test_deletions_in_first_rank_order(self):
        overlap = error_overlap(self.human, self.asr, "deletions", 3)
        self.assertEqual(["and", "the"], overlap.shared)
        self.assertEqual(Fraction(8, 10), overlap.share_a)
        self.assertEqual(Fraction(7, 10), overlap.share_b)
        self.assertEqual((Decimal("80.0"), Decimal("70.0")), overlap.displayed())

    def test_nothing_to_share(self):
        overlap = error_overlap(self.human, self.asr, "insertions", 10)
        self.assertEqual([], overlap.shared)
        self.assertEqual((Fraction(0), Fraction(0)), (overlap.share_a, overlap.share_b))

    def test_same_table_covers_its_top_k(self):
        overlap = error_overlap(self.human, self.human, "deletions", 2)
        self.assertEqual(["and", "the"], overlap.shared)
        self.assertEqual(overlap.share_a, overlap.share_b)

    def test_bad_arguments(self):
        with self.assertRaises(InputError):
            error_overlap(self.human, self.asr, "swaps")
        with self.assertRaises(InputError):
            error_overlap(self.human, self.asr, "deletions", 0)


class CompareSystemsTests(SimpleTestCase):
    def _mk_one(self, errors, n_ref=1000):
        return WerReport(matches=n_ref - errors, subs=errors)

    def test_best_flagged(self):
        comparison = compare_systems({"t1": self._mk_one(44), "t2": self._mk_one(44), "t3": self._mk_one(36)})
        self.assertEqual({"wer": {"t3"}}, comparison.best)
        self.assertEqual(Decimal("3.6"), comparison.wers["t3"]["wer"])

    def test_tie(self):
        comparison = compare_systems({"a": self._mk_one(10), "b": self._mk_one(10)})
        self.assertEqual({"a", "b"}, comparison.best["wer"])
        self.assertEqual([["a", "1.0*"], ["b", "1.0*"]], comparison.rows())

    def test_test_sets(self):
        comparison = compare_systems(
            {
                "t1": {"rt04": self._mk_one(30), "dev04f": self._mk_one(44)},
                "t2": {"rt04": self._mk_one(28), "dev04f": self._mk_one(45)},
            }
        )
        self.assertEqual(["rt04", "dev04f"], comparison.test_sets)
        self.assertEqual({"rt04": {"t2"}, "dev04f": {"t1"}}, comparison.best)

    def test_single(self):
        with self.assertRaises(ReportError):
            compare_systems({"a": self._mk_one(1)})

    def test_different_reference(self):
        with self.assertRaises(IncomparableReportsError):
            compare_systems({"a": self._mk_one(1), "b": self._mk_one(1, n_ref=999)})

    def test_different_test_sets(self):
        with self.assertRaises(IncomparableReportsError):
            compare_systems({"a": {"x": self._mk_one(1)}, "b": {"y": self._mk_one(1)}})


class HesitationAblationTests(SimpleTestCase):
    def test_fixture(self):
        result = hesitation_ablation(*load_sample())
        self.assertLess(result.dropped.dels, result.baseline.dels)
        self.assertEqual(Fraction(100 * 3, 12) - Fraction(100 * 4, 13), result.delta)
        self.assertEqual(Decimal("-5.8"), result.displayed_delta())

    def test_no_hesitations(self):
        stm = [StmSegment("r", "1", "s", 0.0, 2.0, tokens=("good", "evening"))]
        ctm = [CtmEntry("r", "1", 0.1, 0.2, "good")]
        result = hesitation_ablation(stm, ctm)
        self.assertEqual(0, result.delta)
        self.assertEqual(result.baseline, result.dropped)

    def test_baseline_must_keep_hesitations(self):
        with self.assertRaises(RulesConflictError):
            hesitation_ablation(*load_sample(), NormRules(drop_hesitations=True))

    def test_display_rate_helper(self):
        self.assertEqual(Decimal("7.7"), display_rate(1, 13))
