from __future__ import annotations

import argparse
import sys
from types import MethodType

from django.core.management import BaseCommand
from django.core.management import CommandError

from asrkit.cli import HANDLERS
from asrkit.cli import RunConfig
from asrkit.cli import apply_config_file
from asrkit.exceptions import InputError
from asrkit.exceptions import InvariantViolation
from asrkit.reports import FORMATS
from asrkit.reports import render
from asrkit.utils import atomic_write


def usage_error(parser, message: str):
    """
    Bad arguments: usage on stderr and exit 1 from a shell, CommandError otherwise.
    """
    if getattr(parser, "called_from_command_line", False):
        parser.print_usage(sys.stderr)
        parser.exit(1, f"{parser.prog}: error: {message}\n")
    raise CommandError(f"Error: {message}", returncode=1)


class SubcommandParser(argparse.ArgumentParser):
    def __init__(self, *args, called_from_command_line: bool = False, **kwargs):
        self.called_from_command_line = called_from_command_line
        super().__init__(*args, **kwargs)

    def error(self, message):
        usage_error(self, message)


def add_common(parser, norm: bool = True):
    parser.add_argument(
        "--config",
        help="YAML (.yaml/.yml) or key=value file with defaults for this subcommand",
    )
    parser.add_argument(
        "--format",
        default="text",
        choices=FORMATS,
        help="Report format",
    )
    parser.add_argument(
        "-o",
        "--output",
        help="Write the report here instead of standard output",
    )
    parser.add_argument(
        "-j",
        "--jobs",
        type=int,
        default=None,
        help="Worker processes, defaults to the available CPUs",
    )
    parser.add_argument(
        "-v",
        "--verbosity",
        type=int,
        choices=[0, 1, 2, 3],
        default=argparse.SUPPRESS,
        help="2 or more echoes the action log on standard error",
    )
    if not norm:
        return
    parser.add_argument("--no-case-fold", action="store_true", default=False)
    parser.add_argument("--keep-non-speech", action="store_true", default=False)
    parser.add_argument("--keep-partial-words", action="store_true", default=False)
    parser.add_argument("--keep-punctuation", action="store_true", default=False)
    parser.add_argument(
        "--optional-hesitation",
        action="store_true",
        default=False,
        help="Reference hesitations may be deleted at no cost",
    )
    parser.add_argument(
        "--drop-hesitations",
        action="store_true",
        default=False,
        help="Remove hesitations from both sides",
    )
    parser.add_argument(
        "--hesitation-map",
        help="variant<TAB>canonical lines mapped before hesitations are recognized",
    )


class Command(BaseCommand):
    help = "Speech recognition scoring, language modeling and data selection"
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.error = MethodType(usage_error, parser)
        return parser

    def add_arguments(self, parser):
        self.subparsers = {}
        subparsers = parser.add_subparsers(
            dest="subcommand",
            required=True,
            parser_class=SubcommandParser,
        )

        def sub(name, help_text, norm=True):
            p = subparsers.add_parser(
                name,
                help=help_text,
                called_from_command_line=getattr(parser, "called_from_command_line", False),
            )
            add_common(p, norm)
            self.subparsers[name] = p
            return p

        p = sub("score", "WER of a CTM against an STM reference")
        p.add_argument("--stm", required=True, help="Reference segments")
        p.add_argument("--ctm", required=True, help="Hypothesis words")
        p.add_argument("--costs", help="sub,del,ins alignment costs, default 4,3,3")
        p.add_argument("--summary-only", action="store_true", default=False)
        p.add_argument(
            "--hesitation-ablation",
            action="store_true",
            default=False,
            help="Also score without hesitations and report the difference",
        )

        p = sub("analyze", "Error breakdown and most frequent errors")
        p.add_argument("--stm", required=True)
        p.add_argument(
            "--ctm",
            action="append",
            required=True,
            help="[NAME=]PATH, repeat to put systems side by side",
        )
        p.add_argument("--top", type=int, default=10)
        p.add_argument("--costs")
        p.add_argument("--alignments", help="Write per segment alignments here")

        p = sub("compare", "WER table of several systems over test sets")
        p.add_argument("--ref", action="append", required=True, help="[TESTSET=]STM")
        p.add_argument(
            "--hyp",
            action="append",
            required=True,
            help="SYSTEM[:TESTSET]=CTM",
        )
        p.add_argument("--costs")

        p = sub("lm-train", "Train one backoff model per corpus on a shared vocabulary")
        p.add_argument("--corpus", action="append", required=True, help="[NAME=]PATH")
        p.add_argument("--order", type=int, default=None)
        p.add_argument("--vocab-size", type=int, default=None)
        p.add_argument("--heldout", help="Tune mixture weights on this text")
        p.add_argument("--out-dir", required=True)

        p = sub("lm-interp", "Interpolate models, with EM-tuned weights")
        p.add_argument("--models", action="append", required=True, help="a.arpa,b.arpa")
        p.add_argument("--heldout")
        p.add_argument("--weights", help="Fixed comma separated weights, skips tuning")
        p.add_argument("--max-iters", type=int, default=50)
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--out", help="Write the mixture spec (YAML) here")

        p = sub("lm-ppl", "Perplexity of models on a text")
        p.add_argument("--lm", action="append", required=True, help="ARPA or mixture YAML")
        p.add_argument("--text", required=True)

        p = sub("select", "Lightly supervised selection of caption segments")
        p.add_argument("--captions", required=True, help="STM, or segment_id words lines")
        p.add_argument("--ctm", action="append", required=True, help="[NAME=]PATH per system")
        p.add_argument("--strict", default="0.95,0.95,0.9", help="agreement,match,confidence")
        p.add_argument("--relaxed", default="0.8,0.8,0.7", help="agreement,match,confidence")
        p.add_argument("--out-dir")
        p.add_argument("--background", help="ARPA model to bias with the captions")
        p.add_argument("--bias-weight", type=float, default=None)
        p.add_argument("--truth", help="segment_id<TAB>corrupted file to check against")

        p = sub("rescore", "Rerank n-best lists", norm=False)
        p.add_argument("--nbest", required=True)
        p.add_argument("--side", action="append", default=[], help="NAME=PATH side scores")
        p.add_argument("--lm-weight", type=float, default=1.0)
        p.add_argument("--wip", type=float, default=0.0, help="Word insertion penalty")
        p.add_argument("--nn-mix", action="append", default=[], help="NAME[=WEIGHT]")
        p.add_argument("--ngram-model", help="Rescore the n-gram stream with this model")
        p.add_argument("--log-linear", action="store_true", default=False)
        p.add_argument("--merge", help="Second system n-best to merge in first")
        p.add_argument("--merge-side", action="append", default=[])
        p.add_argument("--normalization", default="none", choices=["none", "per-utterance-shift"])
        p.add_argument("--out-nbest")
        p.add_argument("--out-1best")

        p = sub("gen-synth", "Generate a seeded synthetic corpus", norm=False)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--segments", type=int, default=200)
        p.add_argument("--recordings", type=int, default=4)
        p.add_argument("--corrupt-fraction", type=float, default=0.3)
        p.add_argument("--systems", type=int, default=3)
        p.add_argument("--nbest-utterances", type=int, default=50)

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        try:
            if options.get("config"):
                parser = self.subparsers[subcommand]
                defaults = {a.dest: a.default for a in parser._actions if a.dest != "help"}
                list_keys = [a.dest for a in parser._actions if isinstance(a, argparse._AppendAction)]
                apply_config_file(options["config"], options, defaults, list_keys)
            cfg = RunConfig.from_options(subcommand, options)
            cfg.log_stream = self.stderr
            tables = HANDLERS[subcommand](cfg)
            text = render(tables, cfg.fmt)
            if cfg.output:
                with atomic_write(cfg.output) as stream:
                    stream.write(text)
            else:
                self.stdout.write(text, ending="")
        except (InputError, OSError) as exc:
            raise CommandError(str(exc), returncode=1) from exc
        except (InvariantViolation, AssertionError) as exc:
            raise CommandError(f"Internal error: {exc}", returncode=2) from exc
