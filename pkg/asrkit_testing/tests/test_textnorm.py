import random

from django.test import SimpleTestCase

from asrkit.exceptions import ConfigError
from asrkit.exceptions import RulesConflictError
from asrkit.textnorm import HESITATION
from asrkit.textnorm import NormRules
from asrkit.textnorm import NormToken
from asrkit.textnorm import TextCorpus
from asrkit.textnorm import load_hesitation_map
from asrkit.textnorm import normalize
from asrkit.textnorm import normalize_corpus
from asrkit.textnorm import normalize_words
from asrkit_testing.testing import fixture

TOKEN_POOL = [
    "The",
    "cat-",
    "<breath>",
    "sat.",
    "%hesitation",
    "%HESITATION",
    "uh",
    "um,",
    "-",
    "...",
    "'til",
    "rock'n'roll",
    "a-.",
    "HELLO!",
    "co-op",
    "<noise>.",
    "(laughs)",
    "don't",
]

RULE_VARIANTS = [
    NormRules(),
    NormRules.all_off(),
    NormRules(optional_hesitation=True),
    NormRules(drop_hesitations=True),
    NormRules(case_fold=False),
    NormRules(strip_punctuation=False),
    NormRules(remove_partial_words=False, remove_non_speech=False),
    NormRules(hesitation_map={"uh": HESITATION, "um": HESITATION}),
]


class NormRulesTests(SimpleTestCase):
    def test_conflicting_hesitation_flags(self):
        with self.assertRaises(RulesConflictError):
            NormRules(optional_hesitation=True, drop_hesitations=True)

    def test_chained_map(self):
        with self.assertRaises(RulesConflictError):
            NormRules(hesitation_map={"uh": "um", "um": HESITATION})

    def test_non_speech_target(self):
        with self.assertRaises(RulesConflictError):
            NormRules(hesitation_map={"uh": "<noise>"})

    def test_target_changed_by_normalization(self):
        for target in ("hm.", "%HESITATION", "uh-"):
            with self.assertRaises(RulesConflictError):
                NormRules(hesitation_map={"um": target})

    def test_mapped_text_is_stable(self):
        rules = NormRules(hesitation_map={"uh": HESITATION, "ah": "oh"})
        once = normalize_words(["Uh,", "ah", "yes"], rules)
        self.assertEqual([HESITATION, "oh", "yes"], once)
        self.assertEqual(once, normalize_words(once, rules))

    def test_from_options_defaults(self):
        self.assertEqual(NormRules(), NormRules.from_options({}))

    def test_from_options_map_file(self):
        rules = NormRules.from_options({"hesitation_map": fixture("hesitation.map")})
        self.assertEqual({"uh": HESITATION, "um": HESITATION}, rules.hesitation_map)

    def test_with_drop_hesitations(self):
        rules = NormRules(optional_hesitation=True).with_drop_hesitations()
        self.assertTrue(rules.drop_hesitations)
        self.assertFalse(rules.optional_hesitation)

    def test_lexicon_lowered(self):
        rules = NormRules(hesitation_lexicon=frozenset({"%HES"}))
        self.assertEqual(frozenset({"%hes"}), rules.hesitation_lexicon)


class NormalizeTests(SimpleTestCase):
    def test_all_rules(self):
        self.assertEqual(["the", "sat"], normalize_words(["The", "cat-", "<breath>", "sat."], NormRules()))

    def test_drop_hesitations(self):
        self.assertEqual(["yes"], normalize_words(["%hesitation", "yes"], NormRules(drop_hesitations=True)))

    def test_empty(self):
        self.assertEqual([], normalize([], NormRules()))

    def test_hesitation_flagged(self):
        self.assertEqual(
            [NormToken(HESITATION, hesitation=True), NormToken("yes")],
            normalize(["%hesitation", "yes"], NormRules()),
        )

    def test_optional_hesitation(self):
        tokens = normalize(["%hesitation", "yes"], NormRules(optional_hesitation=True))
        self.assertTrue(tokens[0].optional)
        self.assertFalse(tokens[1].optional)

    def test_word_internal_punctuation_survives(self):
        self.assertEqual(
            ["don't", "co-op", "rock'n'roll"],
            normalize_words(["don't", "co-op", "rock'n'roll"], NormRules()),
        )

    def test_variants_not_mapped_by_default(self):
        self.assertEqual(["uh"], normalize_words(["uh"], NormRules(drop_hesitations=True)))

    def test_map_file_rejects_non_speech_target(self):
        with self.assertRaises(ConfigError):
            load_hesitation_map(["uh\t%hesitation", "mm\t<breath>"])

    def test_variants_mapped_when_listed(self):
        with open(fixture("hesitation.map")) as stream:
            mapping = load_hesitation_map(stream)
        rules = NormRules(hesitation_map=mapping, drop_hesitations=True)
        self.assertEqual(["so"], normalize_words(["Uh,", "so", "um"], rules))

    def test_single_dash_is_not_a_partial_word(self):
        self.assertEqual(["-"], normalize_words(["-"], NormRules(strip_punctuation=False)))

    def test_keep_case(self):
        self.assertEqual(["The"], normalize_words(["The"], NormRules(case_fold=False)))

    def test_properties_on_random_input(self):
        rng = random.Random(7)
        for _ in range(300):
            tokens = [rng.choice(TOKEN_POOL) for _ in range(rng.randint(0, 10))]
            for rules in RULE_VARIANTS:
                once = normalize_words(tokens, rules)
                self.assertLessEqual(len(once), len(tokens))
                self.assertEqual(once, normalize_words(once, rules))
            self.assertEqual(tokens, normalize_words(tokens, NormRules.all_off()))


class NormalizeCorpusTests(SimpleTestCase):
    def test_lines(self):
        self.assertEqual([["a", "b"], ["c"]], list(normalize_corpus(["A b\n", "\n", "c\n"], NormRules())))

    def test_punctuation_only_line(self):
        self.assertEqual([], list(normalize_corpus(["?! ...\n"], NormRules())))

    def test_is_lazy(self):
        def lines():
            yield "a b"
            raise AssertionError("read too far")

        corpus = normalize_corpus(lines(), NormRules())
        self.assertEqual(["a", "b"], next(corpus))


class TextCorpusTests(SimpleTestCase):
    def test_reads_again_each_time(self):
        corpus = TextCorpus(fixture("train_a.txt"))
        first = list(corpus)
        self.assertTrue(first)
        self.assertEqual(first, list(corpus))

    def test_streams(self):
        sentences = iter(TextCorpus(fixture("train_a.txt")))
        self.assertIsInstance(next(sentences), list)
        sentences.close()
