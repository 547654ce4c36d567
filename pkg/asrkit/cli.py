"""
Workflows behind the asr management command, and the asrkit console script.
"""

from __future__ import annotations

import csv
import os
import sys
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Any
from typing import Callable
from typing import Iterable
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import TextIO

from asrkit.aligner import AlignCosts
from asrkit.aligner import format_alignment
from asrkit.core import BaseJob
from asrkit.corpus_io import load_lm
from asrkit.corpus_io import parse_ctm
from asrkit.corpus_io import parse_nbest
from asrkit.corpus_io import parse_stm
from asrkit.corpus_io import read_arpa
from asrkit.corpus_io import read_segment_text
from asrkit.corpus_io import write_arpa
from asrkit.corpus_io import write_mixture_spec
from asrkit.corpus_io import write_nbest
from asrkit.corpus_io import write_tsv
from asrkit.data_select import RELAXED
from asrkit.data_select import RELAXED_DEFAULT
from asrkit.data_select import STRICT
from asrkit.data_select import STRICT_DEFAULT
from asrkit.data_select import Selector
from asrkit.data_select import Thresholds
from asrkit.data_select import build_biased_lm
from asrkit.exceptions import ConfigError
from asrkit.exceptions import CorpusFormatError
from asrkit.exceptions import ThresholdOrderError
from asrkit.ngram_lm import InterpolatedLm
from asrkit.ngram_lm import LmTrainer
from asrkit.ngram_lm import perplexity_stats
from asrkit.ngram_lm import tune_weights_em
from asrkit.reports import FORMATS
from asrkit.reports import Table
from asrkit.reports import ablation_table
from asrkit.reports import breakdown_table
from asrkit.reports import comparison_table
from asrkit.reports import confusion_tables
from asrkit.reports import overlap_table
from asrkit.reports import perplexity_table
from asrkit.reports import side_by_side_table
from asrkit.reports import weights_table
from asrkit.reports import wer_table
from asrkit.rescore import NORMALIZATIONS
from asrkit.rescore import RescoreConfig
from asrkit.rescore import Rescorer
from asrkit.rescore import merge_nbest
from asrkit.scorer import ERROR_KINDS
from asrkit.scorer import Scorer
from asrkit.scorer import compare_systems
from asrkit.scorer import error_breakdown
from asrkit.scorer import error_overlap
from asrkit.scorer import hesitation_ablation
from asrkit.scorer import score
from asrkit.scorer import top_errors_side_by_side
from asrkit.synth import SynthGenerator
from asrkit.textnorm import NormRules
from asrkit.textnorm import TextCorpus
from asrkit.utils import StagedOutputs
from asrkit.utils import atomic_write
from asrkit.utils import available_jobs
from asrkit.utils import coerce_option
from asrkit.utils import get_setting
from asrkit.utils import load_config_file

SUBCOMMANDS = (
    "score",
    "analyze",
    "compare",
    "lm-train",
    "lm-interp",
    "lm-ppl",
    "select",
    "rescore",
    "gen-synth",
)

# Options naming input files, checked before any work starts
PATH_OPTIONS = (
    "stm",
    "ctm",
    "ref",
    "hyp",
    "corpus",
    "heldout",
    "models",
    "lm",
    "text",
    "captions",
    "background",
    "truth",
    "nbest",
    "side",
    "merge",
    "merge_side",
    "ngram_model",
    "hesitation_map",
)


def split_named(value: str) -> tuple[str, str]:
    """
    >>> split_named("lstm1=scores.tsv")
    ('lstm1', 'scores.tsv')
    >>> split_named("data/hyp.ctm")
    ('hyp', 'data/hyp.ctm')
    """
    if "=" in value:
        name, path = value.split("=", 1)
        if not name or not path:
            raise ConfigError(f"Expected NAME=PATH, got {value!r}")
        return name, path
    return os.path.splitext(os.path.basename(value))[0], value


def named_paths(values: Iterable[str]) -> dict[str, str]:
    result = {}
    for value in values:
        name, path = split_named(value)
        if name in result:
            raise ConfigError(f"Name {name!r} given twice")
        result[name] = path
    return result


def _option_paths(key: str, value: Any) -> list[str]:
    if not value:
        return []
    values = value if isinstance(value, list) else [value]
    paths = []
    for item in values:
        for part in str(item).split(",") if key == "models" else [str(item)]:
            paths.append(split_named(part)[1])
    return paths


def parse_thresholds(text: str) -> Thresholds:
    """
    agreement,caption_match,confidence with "none" switching the confidence gate off.

    >>> parse_thresholds("0.95,0.95,0.9")
    Thresholds(agreement=0.95, caption_match=0.95, confidence=0.9)
    >>> parse_thresholds("0.8,0.8,none").confidence is None
    True
    """
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"Thresholds need 3 values, got {text!r}")
    try:
        agreement = float(parts[0])
        match = float(parts[1])
        confidence = None if parts[2].lower() == "none" else float(parts[2])
    except ValueError as exc:
        raise ConfigError(f"Can't read thresholds {text!r}") from exc
    return Thresholds(agreement, match, confidence)


def parse_nn_mix(values: Iterable[str]) -> dict[str, float]:
    """
    >>> parse_nn_mix(["ffnn=0.3", "lstm1"])
    {'ffnn': 0.3, 'lstm1': 0.5}
    """
    result = {}
    for value in values:
        if "=" in value:
            name, weight = value.split("=", 1)
            try:
                result[name] = float(weight)
            except ValueError as exc:
                raise ConfigError(f"Can't read mixing weight {value!r}") from exc
        else:
            result[value] = float(get_setting("NN_MIX_WEIGHT"))
    return result


def apply_config_file(
    filename: str,
    options: dict[str, Any],
    defaults: Mapping[str, Any],
    list_keys: Iterable[str] = (),
):
    """
    Fill options still at their default from a YAML or key=value file.
    Options given on the command line win.
    """
    list_keys = set(list_keys)
    for key, value in load_config_file(filename).items():
        if key not in defaults or key == "config":
            raise ConfigError(f"{filename}: unknown key {key!r}")
        if options.get(key) != defaults[key]:
            continue
        if key in list_keys:
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            options[key] = list(value)
        else:
            options[key] = coerce_option(value, defaults[key])


@dataclass
class RunConfig:
    subcommand: str
    options: dict[str, Any] = field(default_factory=dict)
    rules: NormRules = field(default_factory=NormRules)
    costs: AlignCosts = field(default_factory=AlignCosts.default)
    rescore: Optional[RescoreConfig] = None
    strict: Thresholds = STRICT_DEFAULT
    relaxed: Thresholds = RELAXED_DEFAULT
    fmt: str = "text"
    output: Optional[str] = None
    jobs: int = 1
    seed: Optional[int] = None
    echo_log: bool = False
    log_stream: TextIO = sys.stderr

    @classmethod
    def from_options(cls, subcommand: str, options: Mapping[str, Any]) -> RunConfig:
        if subcommand not in SUBCOMMANDS:
            raise ConfigError(f"Unknown subcommand {subcommand!r}")
        options = dict(options)
        for key in PATH_OPTIONS:
            for path in _option_paths(key, options.get(key)):
                if not os.path.exists(path):
                    raise ConfigError(f"--{key.replace('_', '-')}: no such file {path}")
        fmt = options.get("format") or "text"
        if fmt not in FORMATS:
            raise ConfigError(f"Unknown format {fmt!r}")
        jobs = options.get("jobs")
        if jobs is None:
            jobs = available_jobs()
        if jobs < 1:
            raise ConfigError(f"--jobs must be at least 1, got {jobs}")
        costs = AlignCosts.parse(options["costs"]) if options.get("costs") else AlignCosts.default()
        strict = parse_thresholds(options["strict"]) if options.get("strict") else STRICT_DEFAULT
        relaxed = parse_thresholds(options["relaxed"]) if options.get("relaxed") else RELAXED_DEFAULT
        if not strict.at_least(relaxed):
            raise ThresholdOrderError(f"Strict thresholds {strict} are looser than relaxed {relaxed}")
        rescore = None
        if subcommand == "rescore":
            rescore = RescoreConfig(
                lm_weight=float(options.get("lm_weight", 1.0)),
                word_insertion_penalty=float(options.get("wip", 0.0)),
                nn_mix=parse_nn_mix(options.get("nn_mix") or ()),
                log_linear=bool(options.get("log_linear", False)),
            )
        seed = options.get("seed")
        if subcommand == "gen-synth" and seed is None:
            raise ConfigError("gen-synth needs --seed")
        return cls(
            subcommand=subcommand,
            options=options,
            rules=NormRules.from_options(options),
            costs=costs,
            rescore=rescore,
            strict=strict,
            relaxed=relaxed,
            fmt=fmt,
            output=options.get("output"),
            jobs=jobs,
            seed=seed,
            echo_log=options.get("verbosity", 1) >= 2,
        )

    def prepare(self, job: BaseJob) -> BaseJob:
        job.print_log = self.echo_log
        job.log_stream = self.log_stream
        return job


def _lines(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as stream:
        return stream.readlines()


def _stm(path: str):
    with open(path, "r", encoding="utf-8") as stream:
        return parse_stm(stream)


def _ctm(path: str):
    with open(path, "r", encoding="utf-8") as stream:
        return parse_ctm(stream)


def _sentences(path: str, rules: NormRules) -> TextCorpus:
    return TextCorpus(path, rules)


def run_score(cfg: RunConfig) -> list[Table]:
    stm = _stm(cfg.options["stm"])
    ctm = _ctm(cfg.options["ctm"])
    result = cfg.prepare(Scorer(stm, ctm, cfg.rules, cfg.costs, jobs=cfg.jobs))()
    name = split_named(cfg.options["ctm"])[0]
    tables = [wer_table(result.report, name, detail=not cfg.options.get("summary_only"))]
    if cfg.options.get("hesitation_ablation"):
        tables.append(ablation_table(hesitation_ablation(stm, ctm, cfg.rules, cfg.costs, cfg.jobs)))
    return tables


def _write_alignments(path: str, results: Mapping[str, Any]):
    with atomic_write(path) as stream:
        for system, result in results.items():
            stream.write(f"System: {system}\n\n")
            for segment, alignment in result.alignments:
                c = alignment.counts()
                stream.write(f"id: ({segment.segment_id})\n")
                stream.write(f"Speaker: {segment.speaker_id}\n")
                stream.write(f"Scores: (#C #S #D #I) {c.matches} {c.subs} {c.dels} {c.inss}\n")
                stream.write(format_alignment(alignment.ops) + "\n\n")


def run_analyze(cfg: RunConfig) -> list[Table]:
    stm = _stm(cfg.options["stm"])
    systems = named_paths(cfg.options["ctm"])
    keep = bool(cfg.options.get("alignments"))
    results = {
        name: cfg.prepare(
            Scorer(stm, _ctm(path), cfg.rules, cfg.costs, jobs=cfg.jobs, keep_alignments=keep)
        )()
        for name, path in systems.items()
    }
    k = cfg.options.get("top") or 10
    tables = [breakdown_table(error_breakdown({n: r.report for n, r in results.items()}))]
    if len(results) == 1:
        tables.extend(confusion_tables(next(iter(results.values())).confusions, k))
    else:
        confusions = {n: r.confusions for n, r in results.items()}
        for kind in ERROR_KINDS:
            rows = top_errors_side_by_side(confusions, k, kind)
            tables.append(side_by_side_table(kind, list(confusions), rows))
        # every other system against the first one
        first, *others = confusions
        tables.append(
            overlap_table(
                [
                    (first, other, error_overlap(confusions[first], confusions[other], kind, k))
                    for other in others
                    for kind in ERROR_KINDS
                ]
            )
        )
    if keep:
        _write_alignments(cfg.options["alignments"], results)
    return tables


def run_compare(cfg: RunConfig) -> list[Table]:
    refs = named_paths(cfg.options["ref"])
    stms = {name: _stm(path) for name, path in refs.items()}
    reports: dict[str, dict[str, Any]] = {}
    for value in cfg.options["hyp"]:
        name, path = split_named(value)
        if ":" in name:
            system, test_set = name.split(":", 1)
        elif len(refs) == 1:
            system, test_set = name, next(iter(refs))
        else:
            raise ConfigError(f"--hyp {value}: name the test set as SYSTEM:TESTSET=PATH")
        if test_set not in stms:
            raise ConfigError(f"--hyp {value}: no --ref named {test_set}")
        report, _ = score(stms[test_set], _ctm(path), cfg.rules, cfg.costs, cfg.jobs)
        reports.setdefault(system, {})[test_set] = report
    return [comparison_table(compare_systems(reports))]


def run_lm_train(cfg: RunConfig) -> list[Table]:
    corpora = named_paths(cfg.options["corpus"])
    out_dir = cfg.options["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    trainer = cfg.prepare(
        LmTrainer(
            {name: _sentences(path, cfg.rules) for name, path in corpora.items()},
            order=cfg.options.get("order") or get_setting("DEFAULT_ORDER"),
            vocab_size=cfg.options.get("vocab_size") or get_setting("VOCAB_SIZE"),
            jobs=cfg.jobs,
        )
    )
    models = trainer()
    heldout = cfg.options.get("heldout")
    result = None
    if heldout and len(models) > 1:
        result = tune_weights_em(list(models.values()), _sentences(heldout, cfg.rules))
    rows = []
    with StagedOutputs() as outputs:
        for name, model in models.items():
            filename = f"{name}.arpa"
            with outputs.open(os.path.join(out_dir, filename)) as stream:
                write_arpa(model, stream)
            counts = " ".join(f"{n}={c}" for n, c in model.counts_by_order().items())
            rows.append([name, model.order, counts, filename])
        with outputs.open(os.path.join(out_dir, "vocab.txt")) as stream:
            stream.writelines(f"{w}\n" for w in sorted(trainer.vocab))
        if result is not None:
            with outputs.open(os.path.join(out_dir, "mixture.yaml")) as stream:
                write_mixture_spec(stream, [f"{n}.arpa" for n in models], result.weights)
    tables = [Table("models", ("model", "order", "ngrams", "file"), rows)]
    if result is not None:
        tables.extend(weights_table(list(models), result.weights, result.history))
    return tables


def run_lm_interp(cfg: RunConfig) -> list[Table]:
    paths = [p for value in cfg.options["models"] for p in value.split(",") if p]
    if len(paths) < 2:
        raise ConfigError("--models needs at least 2 models")
    components = [load_lm(p) for p in paths]
    heldout = cfg.options.get("heldout")
    sentences = _sentences(heldout, cfg.rules) if heldout else None
    if cfg.options.get("weights"):
        try:
            weights = tuple(float(w) for w in cfg.options["weights"].split(","))
        except ValueError as exc:
            raise ConfigError(f"Can't read --weights {cfg.options['weights']!r}") from exc
        history: list[float] = []
    elif sentences is not None:
        weights, history = tune_weights_em(
            components,
            sentences,
            max_iters=cfg.options.get("max_iters") or 50,
            tol=cfg.options.get("tol") or 1e-6,
        )
    else:
        raise ConfigError("lm-interp needs --heldout or --weights")
    names = [os.path.basename(p) for p in paths]
    tables = weights_table(names, weights, history)
    out = cfg.options.get("out")
    if out:
        base = os.path.dirname(os.path.abspath(out))
        with atomic_write(out) as stream:
            write_mixture_spec(stream, [os.path.relpath(os.path.abspath(p), base) for p in paths], weights)
    if sentences is not None:
        mixture = InterpolatedLm(components, weights)
        tables.append(perplexity_table({"mixture": perplexity_stats(mixture, sentences)}))
    return tables


def run_lm_ppl(cfg: RunConfig) -> list[Table]:
    sentences = _sentences(cfg.options["text"], cfg.rules)
    rows = {}
    for path in cfg.options["lm"]:
        rows[os.path.basename(path)] = perplexity_stats(load_lm(path), sentences)
    return [perplexity_table(rows)]


def _read_truth(path: str) -> dict[str, bool]:
    with open(path, "r", encoding="utf-8", newline="") as stream:
        reader = csv.reader(stream, delimiter="\t")
        next(reader, None)
        truth = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise CorpusFormatError("expected segment_id<TAB>corrupted", line_no)
            truth[row[0]] = row[1] == "1"
        return truth


def _write_selection(outputs: StagedOutputs, out_dir: str, selection):
    with outputs.open(os.path.join(out_dir, "manifest.tsv")) as stream:
        write_tsv(
            (
                [
                    r.segment_id,
                    r.decision,
                    round(r.agreement, 6),
                    round(r.caption_match, 6),
                    "" if r.min_confidence is None else round(r.min_confidence, 6),
                ]
                for r in selection.records
            ),
            stream,
            header=("segment_id", "tier", "agreement", "caption_match", "confidence"),
        )
    for tier in (STRICT, RELAXED):
        with outputs.open(os.path.join(out_dir, f"{tier}.txt")) as stream:
            write_tsv(([r.segment_id, " ".join(r.caption)] for r in selection.members(tier)), stream)


def run_select(cfg: RunConfig) -> list[Table]:
    out_dir = cfg.options.get("out_dir")
    truth_path = cfg.options.get("truth")
    truth = _read_truth(truth_path) if truth_path else None
    background = cfg.options.get("background")
    background_lm = None
    if background:
        if not out_dir:
            raise ConfigError("--background needs --out-dir for the biased model")
        with open(background, "r", encoding="utf-8") as stream:
            background_lm = read_arpa(stream)
    captions_path = cfg.options["captions"]
    if captions_path.endswith(".stm"):
        captions = _stm(captions_path)
    else:
        with open(captions_path, "r", encoding="utf-8") as stream:
            captions = read_segment_text(stream)
    systems = {name: _ctm(path) for name, path in named_paths(cfg.options["ctm"]).items()}
    selector = cfg.prepare(
        Selector(
            captions,
            systems,
            cfg.rules,
            strict=cfg.strict,
            relaxed=cfg.relaxed,
            jobs=cfg.jobs,
        )
    )
    selection = selector()
    tables = [
        Table(
            "selection",
            ("tier", "segments", "words"),
            [[tier, s.segments, s.words] for tier, s in selection.summary.items()],
        )
    ]
    biased = None
    if background_lm is not None:
        bias_weight = cfg.options.get("bias_weight") or get_setting("DEFAULT_BIAS_WEIGHT")
        biased = build_biased_lm([r.caption for r in selection.records], background_lm, bias_weight)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with StagedOutputs() as outputs:
            _write_selection(outputs, out_dir, selection)
            if biased is not None:
                with outputs.open(os.path.join(out_dir, "biased_captions.arpa")) as stream:
                    write_arpa(biased.components[0], stream)
                background_path = os.path.relpath(os.path.abspath(background), os.path.abspath(out_dir))
                with outputs.open(os.path.join(out_dir, "biased_lm.yaml")) as stream:
                    write_mixture_spec(
                        stream,
                        ["biased_captions.arpa", background_path],
                        biased.weights,
                        bias_weight=bias_weight,
                    )
    if truth is not None:
        corrupted = {sid for sid, flag in truth.items() if flag}
        strict_ids = {r.segment_id for r in selection.members(STRICT)}
        relaxed_ids = {r.segment_id for r in selection.members(RELAXED)}
        tables.append(
            Table(
                "truth",
                ("corrupted", "in_strict", "in_relaxed"),
                [[len(corrupted), len(corrupted & strict_ids), len(corrupted & relaxed_ids)]],
            )
        )
    return tables


def run_rescore(cfg: RunConfig) -> list[Table]:
    side = {name: _lines(path) for name, path in named_paths(cfg.options.get("side") or ()).items()}
    nbest = parse_nbest(_lines(cfg.options["nbest"]), side)
    if cfg.options.get("merge"):
        merge_side = {
            name: _lines(path)
            for name, path in named_paths(cfg.options.get("merge_side") or ()).items()
        }
        other = parse_nbest(_lines(cfg.options["merge"]), merge_side)
        nbest = merge_nbest(nbest, other, cfg.options.get("normalization") or NORMALIZATIONS[0])
    rescore_cfg = cfg.rescore
    if cfg.options.get("ngram_model"):
        rescore_cfg = replace(rescore_cfg, ngram_model=load_lm(cfg.options["ngram_model"]))
    result = cfg.prepare(Rescorer(nbest, rescore_cfg, jobs=cfg.jobs))()
    if cfg.options.get("out_nbest"):
        with atomic_write(cfg.options["out_nbest"]) as stream:
            write_nbest(result.as_nbest(), stream)
    rows = [[utt, " ".join(entry.words)] for utt, entry in result.best.items()]
    if cfg.options.get("out_1best"):
        with atomic_write(cfg.options["out_1best"]) as stream:
            write_tsv(rows, stream)
    return [Table("one_best", ("utterance_id", "words"), rows, lambda r: f"{r[0]}\t{r[1]}")]


def run_gen_synth(cfg: RunConfig) -> list[Table]:
    rates = (0.04, 0.06, 0.08, 0.1, 0.12)
    n_systems = cfg.options.get("systems") or 3
    if not 2 <= n_systems <= len(rates):
        raise ConfigError(f"--systems must be between 2 and {len(rates)}")
    generator = cfg.prepare(
        SynthGenerator(
            cfg.seed,
            recordings=cfg.options.get("recordings") or 4,
            segments=cfg.options.get("segments") or 200,
            corrupt_fraction=cfg.options.get("corrupt_fraction", 0.3),
            error_rates=rates[:n_systems],
            nbest_utterances=cfg.options.get("nbest_utterances") or 50,
        )
    )
    corpus = generator()
    written = corpus.write(cfg.options["out"])
    return [
        Table(
            "gen_synth",
            ("seed", "segments", "corrupted", "ref_words", "files"),
            [
                [
                    cfg.seed,
                    len(corpus.ref),
                    sum(corpus.corrupted.values()),
                    corpus.n_ref_words,
                    " ".join(written),
                ]
            ],
        )
    ]


HANDLERS: dict[str, Callable[[RunConfig], list[Table]]] = {
    "score": run_score,
    "analyze": run_analyze,
    "compare": run_compare,
    "lm-train": run_lm_train,
    "lm-interp": run_lm_interp,
    "lm-ppl": run_lm_ppl,
    "select": run_select,
    "rescore": run_rescore,
    "gen-synth": run_gen_synth,
}


def run(argv: Sequence[str]) -> int:
    """
    Run one subcommand and return the exit code: 0 on success, 1 for bad input,
    2 when an internal invariant broke.
    """
    import django
    from django.conf import settings

    if not settings.configured:
        settings.configure(INSTALLED_APPS=["asrkit"])
        django.setup()
    from asrkit.management.commands.asr import Command

    try:
        Command().run_from_argv(["asrkit", "asr", *argv])
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0


def main():  # pragma: no cover
    sys.exit(run(sys.argv[1:]))
