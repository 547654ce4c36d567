"""
Readers and writers for the line formats the toolkit deals with:
CTM, STM, ARPA, n-best lists with side score files, plain text corpora and TSV.

Fields are separated by any run of whitespace. Lines starting with ";;" and blank
lines are skipped, anything else either parses or raises.
"""

from __future__ import annotations

import csv
import io
import os
from collections import defaultdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from math import isfinite
from typing import Iterable
from typing import Iterator
from typing import Mapping
from typing import Optional
from typing import TextIO

import yaml

from asrkit.exceptions import ArpaFormatError
from asrkit.exceptions import ArpaValueError
from asrkit.exceptions import ConfigError
from asrkit.exceptions import CorpusFormatError
from asrkit.exceptions import DuplicateEntryError
from asrkit.exceptions import JoinError
from asrkit.exceptions import OrderingError
from asrkit.exceptions import RankContiguityError
from asrkit.exceptions import SegmentRangeError
from asrkit.ngram_lm import InterpolatedLm
from asrkit.ngram_lm import LanguageModel
from asrkit.ngram_lm import NGramEntry
from asrkit.ngram_lm import NGramModel
from asrkit.utils import format_number

EXCLUDE_TOKEN = "IGNORE_TIME_SEGMENT_IN_SCORING"


def _records(stream: Iterable[str]) -> Iterator[tuple[int, list[str]]]:
    for line_no, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields or fields[0].startswith(";;"):
            continue
        yield line_no, fields


def _to_float(value: str, name: str, line_no: Optional[int] = None) -> float:
    try:
        result = float(value)
    except ValueError:
        raise CorpusFormatError(f"{name} is not a number: {value!r}", line_no)
    if not isfinite(result):
        raise CorpusFormatError(f"{name} must be finite: {value!r}", line_no)
    return result


@dataclass(frozen=True)
class CtmEntry:
    recording_id: str
    channel: str
    tbeg: float
    tdur: float
    word: str
    # None means "no estimate", which is not the same thing as 0.0
    confidence: Optional[float] = None

    def __post_init__(self):
        if self.tbeg < 0 or self.tdur < 0:
            raise CorpusFormatError(
                f"negative time in {self.recording_id}: {self.tbeg} {self.tdur}"
            )
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise CorpusFormatError(f"confidence out of range: {self.confidence}")

    @property
    def stream(self) -> tuple[str, str]:
        return self.recording_id, self.channel

    @property
    def midpoint(self) -> float:
        return self.tbeg + self.tdur / 2


def parse_ctm(stream: Iterable[str]) -> list[CtmEntry]:
    """
    >>> parse_ctm(["CNN 1 17.21 0.33 the 0.97"])
    [CtmEntry(recording_id='CNN', channel='1', tbeg=17.21, tdur=0.33, word='the', confidence=0.97)]
    >>> parse_ctm([";; comment"])
    []
    >>> parse_ctm(["CNN 1 5.0 0.1 a", "CNN 1 4.0 0.1 b"])
    Traceback (most recent call last):
    ...
    asrkit.exceptions.OrderingError: line 2: stream CNN/1 out of order: 4.0 after 5.0
    """
    entries = []
    last_tbeg: dict[tuple[str, str], float] = {}
    for line_no, fields in _records(stream):
        if len(fields) not in (5, 6):
            raise CorpusFormatError(
                f"CTM needs 5 or 6 fields, got {len(fields)}", line_no
            )
        tbeg = _to_float(fields[2], "tbeg", line_no)
        tdur = _to_float(fields[3], "tdur", line_no)
        confidence = None
        if len(fields) == 6:
            confidence = _to_float(fields[5], "confidence", line_no)
        try:
            entry = CtmEntry(fields[0], fields[1], tbeg, tdur, fields[4], confidence)
        except CorpusFormatError as exc:
            raise CorpusFormatError(str(exc), line_no) from exc
        prev = last_tbeg.get(entry.stream)
        if prev is not None and tbeg < prev:
            raise OrderingError(entry.stream, line_no, tbeg, prev)
        last_tbeg[entry.stream] = tbeg
        entries.append(entry)
    return entries


def write_ctm(entries: Iterable[CtmEntry], stream: TextIO):
    for e in entries:
        line = f"{e.recording_id} {e.channel} {format_number(e.tbeg)} {format_number(e.tdur)} {e.word}"
        if e.confidence is not None:
            line += f" {format_number(e.confidence)}"
        stream.write(line + "\n")


@dataclass(frozen=True)
class StmSegment:
    recording_id: str
    channel: str
    speaker_id: str
    tbeg: float
    tend: float
    # Kept in file order, never interpreted
    labels: tuple[str, ...] = ()
    tokens: tuple[str, ...] = ()
    scorable: bool = True

    def __post_init__(self):
        if not self.tbeg < self.tend:
            raise SegmentRangeError(
                f"segment {self.recording_id} {self.tbeg}-{self.tend} has tbeg >= tend"
            )
        if not self.scorable and self.tokens:
            raise CorpusFormatError("a segment excluded from scoring can't have words")

    @property
    def stream(self) -> tuple[str, str]:
        return self.recording_id, self.channel

    @property
    def segment_id(self) -> str:
        """
        >>> StmSegment("CNN", "1", "spkA", 10.0, 12.5).segment_id
        'CNN-1-0001000-0001250'
        """
        return (
            f"{self.recording_id}-{self.channel}-"
            f"{round(self.tbeg * 100):07d}-{round(self.tend * 100):07d}"
        )

    def contains(self, t: float) -> bool:
        return self.tbeg <= t < self.tend


def _is_label_field(token: str) -> bool:
    # "<>" or a comma list; "<breath>" and friends stay transcript tokens
    return token.startswith("<") and token.endswith(">") and (token == "<>" or "," in token)


def parse_stm(stream: Iterable[str]) -> list[StmSegment]:
    """
    The field after tend holds labels only in the "<a,b,c>" form. A lone label
    is written "<a,>", and a bracketed word such as "<breath>" is a token.

    >>> seg = parse_stm(["CNN 1 spkA 10.0 12.5 <o,f0,female> good evening everyone"])[0]
    >>> seg.labels, seg.tokens, seg.scorable
    (('o', 'f0', 'female'), ('good', 'evening', 'everyone'), True)
    >>> seg = parse_stm(["CNN 1 spkA 10.0 12.5 <breath> hello there"])[0]
    >>> seg.labels, seg.tokens
    ((), ('<breath>', 'hello', 'there'))
    >>> parse_stm(["CNN 1 spkA 10.0 12.5 IGNORE_TIME_SEGMENT_IN_SCORING"])[0].scorable
    False
    >>> parse_stm(["CNN 1 spkA 12.0 10.0 hello"])
    Traceback (most recent call last):
    ...
    asrkit.exceptions.SegmentRangeError: line 1: segment CNN 12.0-10.0 has tbeg >= tend
    """
    segments = []
    for line_no, fields in _records(stream):
        if len(fields) < 5:
            raise CorpusFormatError(f"STM needs at least 5 fields, got {len(fields)}", line_no)
        tbeg = _to_float(fields[3], "tbeg", line_no)
        tend = _to_float(fields[4], "tend", line_no)
        rest = fields[5:]
        labels: tuple[str, ...] = ()
        if rest and _is_label_field(rest[0]):
            labels = tuple(label for label in rest[0][1:-1].split(",") if label)
            rest = rest[1:]
        scorable = True
        if len(rest) == 1 and rest[0].upper() == EXCLUDE_TOKEN:
            scorable = False
            rest = []
        try:
            segment = StmSegment(
                fields[0],
                fields[1],
                fields[2],
                tbeg,
                tend,
                labels=labels,
                tokens=tuple(rest),
                scorable=scorable,
            )
        except CorpusFormatError as exc:
            raise type(exc)(str(exc), line_no) from exc
        segments.append(segment)
    return segments


def write_stm(segments: Iterable[StmSegment], stream: TextIO):
    for s in segments:
        parts = [
            s.recording_id,
            s.channel,
            s.speaker_id,
            format_number(s.tbeg),
            format_number(s.tend),
        ]
        first = s.tokens[0] if s.tokens else ""
        if s.labels or _is_label_field(first):
            # a lone label keeps its trailing comma so it reads back as a label
            labels = ",".join(s.labels)
            parts.append(f"<{labels},>" if len(s.labels) == 1 else f"<{labels}>")
        if s.scorable:
            parts.extend(s.tokens)
        else:
            parts.append(EXCLUDE_TOKEN)
        stream.write(" ".join(parts) + "\n")


@dataclass(frozen=True)
class NBestEntry:
    utterance_id: str
    rank: int
    am_score: float
    lm_score: float
    words: tuple[str, ...] = ()
    extra_lm_scores: Mapping[str, float] = field(default_factory=dict)

    def with_extra(self, name: str, score: float) -> NBestEntry:
        extra = dict(self.extra_lm_scores)
        extra[name] = score
        return replace(self, extra_lm_scores=extra)


def parse_side_scores(stream: Iterable[str]) -> dict[tuple[str, int], float]:
    """
    Side files carry one extra log10 score per hypothesis: utterance_id TAB rank TAB score

    >>> parse_side_scores(["utt1\\t1\\t-30.1"])
    {('utt1', 1): -30.1}
    """
    scores = {}
    for line_no, fields in _records(stream):
        if len(fields) != 3:
            raise CorpusFormatError(f"side score lines need 3 fields, got {len(fields)}", line_no)
        key = (fields[0], _to_rank(fields[1], line_no))
        if key in scores:
            raise DuplicateEntryError(f"line {line_no}: duplicate side score for {key}")
        scores[key] = _to_float(fields[2], "score", line_no)
    return scores


def _to_rank(value: str, line_no: int) -> int:
    try:
        rank = int(value)
    except ValueError:
        raise CorpusFormatError(f"rank is not an integer: {value!r}", line_no)
    if rank < 1:
        raise CorpusFormatError(f"rank must be positive: {rank}", line_no)
    return rank


def join_side_scores(
    nbest: dict[str, list[NBestEntry]],
    name: str,
    scores: Mapping[tuple[str, int], float],
):
    """
    Attach a named score stream to the entries, in place.
    Every key in scores must match an entry.
    """
    for (utterance_id, rank), score in scores.items():
        entries = nbest.get(utterance_id)
        if entries is None or not 1 <= rank <= len(entries):
            raise JoinError(utterance_id, rank, name)
        entries[rank - 1] = entries[rank - 1].with_extra(name, score)


def parse_nbest(
    stream: Iterable[str],
    side_scores: Optional[Mapping[str, Iterable[str]]] = None,
) -> dict[str, list[NBestEntry]]:
    """
    Lines are: utterance_id rank am_score lm_score word1 word2 ...
    Lists come back ordered by rank.

    >>> nbest = parse_nbest(["utt1 1 -120.5 -34.2 the cat sat"], {"lstm1": ["utt1 1 -30.1"]})
    >>> entry = nbest["utt1"][0]
    >>> entry.rank, entry.words, entry.extra_lm_scores
    (1, ('the', 'cat', 'sat'), {'lstm1': -30.1})

    >>> parse_nbest(["utt1 1 -1 -1 a", "utt1 3 -1 -1 b"])
    Traceback (most recent call last):
    ...
    asrkit.exceptions.RankContiguityError: utt1 has ranks [1, 3], expected 1..2
    """
    by_utterance: dict[str, dict[int, NBestEntry]] = defaultdict(dict)
    for line_no, fields in _records(stream):
        if len(fields) < 4:
            raise CorpusFormatError(f"n-best lines need at least 4 fields, got {len(fields)}", line_no)
        utterance_id = fields[0]
        rank = _to_rank(fields[1], line_no)
        if rank in by_utterance[utterance_id]:
            raise DuplicateEntryError(f"line {line_no}: duplicate entry ({utterance_id}, {rank})")
        by_utterance[utterance_id][rank] = NBestEntry(
            utterance_id,
            rank,
            _to_float(fields[2], "am_score", line_no),
            _to_float(fields[3], "lm_score", line_no),
            tuple(fields[4:]),
        )
    result = {}
    for utterance_id, entries in by_utterance.items():
        ranks = sorted(entries)
        if ranks != list(range(1, len(ranks) + 1)):
            raise RankContiguityError(
                f"{utterance_id} has ranks {ranks}, expected 1..{len(ranks)}"
            )
        result[utterance_id] = [entries[r] for r in ranks]
    for name, side_stream in (side_scores or {}).items():
        join_side_scores(result, name, parse_side_scores(side_stream))
    return result


def write_nbest(nbest: Mapping[str, Iterable[NBestEntry]], stream: TextIO):
    for entries in nbest.values():
        for e in entries:
            parts = [
                e.utterance_id,
                str(e.rank),
                format_number(e.am_score),
                format_number(e.lm_score),
                *e.words,
            ]
            stream.write(" ".join(parts) + "\n")


def write_side_scores(nbest: Mapping[str, Iterable[NBestEntry]], name: str, stream: TextIO):
    for entries in nbest.values():
        for e in entries:
            if name in e.extra_lm_scores:
                stream.write(
                    f"{e.utterance_id}\t{e.rank}\t{format_number(e.extra_lm_scores[name])}\n"
                )


def read_arpa(stream: Iterable[str]) -> NGramModel:
    """
    >>> model = read_arpa(ARPA_EXAMPLE.splitlines())
    >>> model.order, model.counts_by_order()
    (2, {1: 3, 2: 1})
    >>> read_arpa(ARPA_EXAMPLE.replace("ngram 1=3", "ngram 1=4").splitlines())
    Traceback (most recent call last):
    ...
    asrkit.exceptions.ArpaFormatError: 1-grams: header says 4, found 3
    """
    declared: dict[int, int] = {}
    found: dict[int, int] = defaultdict(int)
    entries: dict[tuple[str, ...], NGramEntry] = {}
    section: Optional[int] = None
    state = "preamble"
    for line_no, line in enumerate(stream, start=1):
        text = line.strip()
        if state == "preamble":
            if text == "\\data\\":
                state = "data"
            continue
        if not text:
            continue
        if text == "\\end\\":
            state = "end"
            break
        if text.startswith("\\") and text.endswith("-grams:"):
            try:
                section = int(text[1 : -len("-grams:")])
            except ValueError:
                raise ArpaFormatError(f"bad section header {text!r}", line_no)
            if section not in declared:
                raise ArpaFormatError(f"section {section}-grams not declared", line_no)
            state = "ngrams"
            continue
        if state == "data":
            if not text.startswith("ngram "):
                raise ArpaFormatError(f"expected 'ngram N=count', got {text!r}", line_no)
            try:
                n, count = text[len("ngram ") :].split("=")
                declared[int(n)] = int(count)
            except ValueError:
                raise ArpaFormatError(f"bad count line {text!r}", line_no)
            continue
        fields = text.split()
        if len(fields) == section + 1:
            backoff = None
        elif len(fields) == section + 2:
            backoff = _to_float(fields[-1], "backoff", line_no)
        else:
            raise ArpaFormatError(
                f"{section}-gram line needs {section + 1} or {section + 2} fields", line_no
            )
        logprob = _to_float(fields[0], "log10 probability", line_no)
        if logprob > 0:
            raise ArpaValueError(f"log10 probability above 0: {logprob}", line_no)
        ngram = tuple(fields[1 : section + 1])
        if ngram in entries:
            raise ArpaFormatError(f"duplicate n-gram {' '.join(ngram)}", line_no)
        entries[ngram] = NGramEntry(logprob, backoff)
        found[section] += 1
    if state != "end":
        raise ArpaFormatError("missing \\end\\ marker")
    for n, count in sorted(declared.items()):
        if found[n] != count:
            raise ArpaFormatError(f"{n}-grams: header says {count}, found {found[n]}")
    if not declared:
        raise ArpaFormatError("no n-gram counts declared")
    return NGramModel(order=max(declared), entries=entries, smoothing_tag="arpa")


def write_arpa(model: NGramModel, stream: Optional[TextIO] = None) -> Optional[str]:
    """
    Write the model in ARPA layout. Returns the text when no stream is given.

    >>> print(write_arpa(read_arpa(ARPA_EXAMPLE.splitlines())).split("\\n\\n")[0])
    \\data\\
    ngram 1=3
    ngram 2=1
    """
    if stream is None:
        buffer = io.StringIO()
        write_arpa(model, buffer)
        return buffer.getvalue()
    by_order: dict[int, list[tuple[tuple[str, ...], NGramEntry]]] = defaultdict(list)
    for ngram, entry in model.entries.items():
        by_order[len(ngram)].append((ngram, entry))
    stream.write("\\data\\\n")
    for n in range(1, model.order + 1):
        stream.write(f"ngram {n}={len(by_order[n])}\n")
    for n in range(1, model.order + 1):
        stream.write(f"\n\\{n}-grams:\n")
        for ngram, entry in sorted(by_order[n]):
            line = f"{entry.logprob:.7f}\t{' '.join(ngram)}"
            if entry.backoff is not None:
                line += f"\t{entry.backoff:.7f}"
            stream.write(line + "\n")
    stream.write("\n\\end\\\n")
    return None


ARPA_EXAMPLE = """
\\data\\
ngram 1=3
ngram 2=1

\\1-grams:
-99\t<s>\t-0.30103
-0.30103\ta
-0.30103\t</s>

\\2-grams:
0\t<s> a

\\end\\
"""


def read_text_corpus(stream: Iterable[str]) -> Iterator[list[str]]:
    """
    One sentence per line, streamed. Blank lines are skipped.

    >>> list(read_text_corpus(["a b", "", "c"]))
    [['a', 'b'], ['c']]
    """
    for line in stream:
        tokens = line.split()
        if tokens:
            yield tokens


def read_segment_text(stream: Iterable[str]) -> dict[str, tuple[str, ...]]:
    """
    Lines of "segment_id word1 word2 ...".

    >>> read_segment_text(["seg1 good evening", "seg2"])
    {'seg1': ('good', 'evening'), 'seg2': ()}
    """
    result = {}
    for line_no, fields in _records(stream):
        if fields[0] in result:
            raise DuplicateEntryError(f"line {line_no}: duplicate segment id {fields[0]}")
        result[fields[0]] = tuple(fields[1:])
    return result


def write_tsv(rows: Iterable[Iterable], stream: TextIO, header: Optional[Iterable[str]] = None):
    writer = csv.writer(stream, delimiter="\t", lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    writer.writerows(rows)


def write_mixture_spec(
    stream: TextIO,
    model_paths: Iterable[str],
    weights: Iterable[float],
    bias_weight: Optional[float] = None,
):
    """
    A mixture is stored as YAML naming the component ARPA files and their weights.
    Relative paths are read against the directory of the spec file.
    """
    data = {
        "components": [
            {"path": str(path), "weight": float(weight)}
            for path, weight in zip(model_paths, weights)
        ]
    }
    if bias_weight is not None:
        data["bias_weight"] = float(bias_weight)
    yaml.safe_dump(data, stream, sort_keys=False)


def read_mixture_spec(path: str) -> InterpolatedLm:
    with open(path, "r", encoding="utf-8") as stream:
        try:
            data = yaml.safe_load(stream)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        components = data["components"]
        paths = [c["path"] for c in components]
        weights = [float(c["weight"]) for c in components]
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: not a mixture spec ({exc})") from exc
    base = os.path.dirname(os.path.abspath(path))
    models = []
    for model_path in paths:
        with open(os.path.join(base, model_path), "r", encoding="utf-8") as stream:
            models.append(read_arpa(stream))
    return InterpolatedLm(models, weights)


def load_lm(path: str) -> LanguageModel:
    """
    An ARPA file or a YAML mixture spec, by extension.
    """
    if path.endswith(".yaml") or path.endswith(".yml"):
        return read_mixture_spec(path)
    with open(path, "r", encoding="utf-8") as stream:
        return read_arpa(stream)
