"""
Token filtering applied to both sides before scoring, and to LM training text.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Any
from typing import Iterable
from typing import Iterator
from typing import Mapping

from asrkit.exceptions import ConfigError
from asrkit.exceptions import RulesConflictError

HESITATION = "%hesitation"
NON_SPEECH_PATTERN = r"^<[^<>]*>$"

PUNCTUATION = string.punctuation
# Hesitation symbols start with "%", so they are matched before it gets stripped
PUNCTUATION_KEEP_PERCENT = PUNCTUATION.replace("%", "")


@dataclass(frozen=True)
class NormToken:
    text: str
    hesitation: bool = False
    # Deletable at no cost when aligned as reference
    optional: bool = False


@dataclass(frozen=True)
class NormRules:
    remove_non_speech: bool = True
    remove_partial_words: bool = True
    strip_punctuation: bool = True
    optional_hesitation: bool = False
    drop_hesitations: bool = False
    case_fold: bool = True
    hesitation_lexicon: frozenset[str] = frozenset({HESITATION})
    non_speech_pattern: str = NON_SPEECH_PATTERN
    hesitation_map: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.optional_hesitation and self.drop_hesitations:
            raise RulesConflictError(
                "optional_hesitation and drop_hesitations can't both be set"
            )
        chained = set(self.hesitation_map.values()) & set(self.hesitation_map)
        if chained:
            raise RulesConflictError(
                f"Mapping targets can't also be mapped: {', '.join(sorted(chained))}"
            )
        object.__setattr__(
            self, "hesitation_lexicon", frozenset(x.lower() for x in self.hesitation_lexicon)
        )
        object.__setattr__(self, "_non_speech", re.compile(self.non_speech_pattern))
        if self.hesitation_map:
            self._check_map_targets()

    def _check_map_targets(self):
        # targets are fixed points of normalization without the map
        plain = replace(
            self, hesitation_map={}, drop_hesitations=False, optional_hesitation=False
        )
        unstable = sorted(
            {t for t in self.hesitation_map.values() if normalize_words([t], plain) != [t]}
        )
        if unstable:
            raise RulesConflictError(
                f"Mapping targets change under normalization: {', '.join(unstable)}"
            )

    @classmethod
    def all_off(cls) -> NormRules:
        return cls(
            remove_non_speech=False,
            remove_partial_words=False,
            strip_punctuation=False,
            case_fold=False,
        )

    @classmethod
    def from_options(cls, options: Mapping[str, Any]) -> NormRules:
        """
        Build rules from command options (the keep-/no- flags).

        >>> NormRules.from_options({"no_case_fold": True, "drop_hesitations": True}).case_fold
        False
        """
        hesitation_map = {}
        if options.get("hesitation_map"):
            with open(options["hesitation_map"], "r", encoding="utf-8") as stream:
                hesitation_map = load_hesitation_map(stream)
        return cls(
            remove_non_speech=not options.get("keep_non_speech", False),
            remove_partial_words=not options.get("keep_partial_words", False),
            strip_punctuation=not options.get("keep_punctuation", False),
            optional_hesitation=bool(options.get("optional_hesitation", False)),
            drop_hesitations=bool(options.get("drop_hesitations", False)),
            case_fold=not options.get("no_case_fold", False),
            hesitation_map=hesitation_map,
        )

    def with_drop_hesitations(self) -> NormRules:
        return replace(self, optional_hesitation=False, drop_hesitations=True)


def load_hesitation_map(stream: Iterable[str]) -> dict[str, str]:
    """
    Lines of variant<TAB>canonical. Nothing is mapped unless listed here.

    >>> load_hesitation_map(["# filled pauses", "uh\\t%hesitation", "um\\t%hesitation"])
    {'uh': '%hesitation', 'um': '%hesitation'}
    """
    result = {}
    for line_no, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) != 2:
            raise ConfigError(f"line {line_no}: expected variant<TAB>canonical")
        if re.match(NON_SPEECH_PATTERN, fields[1]):
            raise ConfigError(f"line {line_no}: non-speech token {fields[1]} can't be a target")
        result[fields[0]] = fields[1]
    return result


def normalize(tokens: Iterable[str], rules: NormRules) -> list[NormToken]:
    """
    >>> [t.text for t in normalize(["The", "cat-", "<breath>", "sat."], NormRules())]
    ['the', 'sat']
    >>> [t.text for t in normalize(["%hesitation", "yes"], NormRules(drop_hesitations=True))]
    ['yes']
    >>> normalize(["%HESITATION"], NormRules(optional_hesitation=True))
    [NormToken(text='%hesitation', hesitation=True, optional=True)]
    >>> normalize([], NormRules())
    []
    """
    result = []
    lexicon = rules.hesitation_lexicon
    mapping = rules.hesitation_map
    non_speech = rules._non_speech
    for token in tokens:
        text = token.lower() if rules.case_fold else token
        if rules.remove_non_speech and non_speech.match(text):
            continue
        if rules.remove_partial_words and len(text) > 1 and text.endswith("-"):
            continue
        if rules.strip_punctuation:
            candidate = text.strip(PUNCTUATION_KEEP_PERCENT)
            text = text.strip(PUNCTUATION)
        else:
            candidate = text
        candidate = mapping.get(candidate, candidate)
        text = mapping.get(text, text)
        if candidate.lower() in lexicon or text.lower() in lexicon:
            if rules.drop_hesitations:
                continue
            hesitation = candidate if candidate.lower() in lexicon else text
            result.append(NormToken(hesitation, True, rules.optional_hesitation))
        elif text:
            result.append(NormToken(text))
    return result


def normalize_words(tokens: Iterable[str], rules: NormRules) -> list[str]:
    return [t.text for t in normalize(tokens, rules)]


def normalize_corpus(stream: Iterable[str], rules: NormRules) -> Iterator[list[str]]:
    """
    Line by line, lazily. Lines left empty are dropped.

    >>> list(normalize_corpus(["A b", "", "c", "?!"], NormRules()))
    [['a', 'b'], ['c']]
    """
    for line in stream:
        words = normalize_words(line.split(), rules)
        if words:
            yield words


@dataclass(frozen=True)
class TextCorpus:
    """
    A text file read as normalized sentences. Each iteration streams the file
    again. Only the path and the rules get pickled for worker processes.
    """

    path: str
    rules: NormRules = field(default_factory=NormRules)

    def __iter__(self) -> Iterator[list[str]]:
        with open(self.path, "r", encoding="utf-8") as stream:
            yield from normalize_corpus(stream, self.rules)
