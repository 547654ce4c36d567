"""
Rendering of report tables as aligned text, TSV or JSON.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Iterable
from typing import Mapping
from typing import Optional
from typing import Sequence

from django.core.serializers.json import DjangoJSONEncoder

from asrkit.corpus_io import write_tsv
from asrkit.exceptions import ConfigError
from asrkit.ngram_lm import PerplexityStats
from asrkit.scorer import RATE_NAMES
from asrkit.scorer import AblationResult
from asrkit.scorer import Comparison
from asrkit.scorer import ConfusionTable
from asrkit.scorer import ErrorOverlap
from asrkit.scorer import WerReport
from asrkit.scorer import ranked_confusions
from asrkit.utils import format_number

FORMATS = ("text", "tsv", "json")


@dataclass
class Table:
    title: str
    header: Sequence[str]
    rows: list[Sequence] = field(default_factory=list)
    # Text mode renders each row through this instead of aligned columns
    line_format: Optional[Callable[[Sequence], str]] = None


def _cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return format_number(value)
    return str(value)


def render_text(tables: Iterable[Table]) -> str:
    """
    >>> print(render_text([Table("t", ["a", "bb"], [[1, 2], [333, 4]])]), end="")
    t
    a    bb
    1    2
    333  4
    """
    blocks = []
    for table in tables:
        lines = [table.title]
        if table.line_format is not None:
            lines.extend(table.line_format(row) for row in table.rows)
        else:
            cells = [[str(h) for h in table.header]] + [[_cell(v) for v in r] for r in table.rows]
            widths = [max(len(row[i]) for row in cells) for i in range(len(table.header))]
            for row in cells:
                line = "  ".join(v.ljust(w) for v, w in zip(row, widths))
                lines.append(line.rstrip())
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def render_tsv(tables: Iterable[Table]) -> str:
    blocks = []
    for table in tables:
        buffer = io.StringIO()
        write_tsv(([_cell(v) for v in row] for row in table.rows), buffer, header=table.header)
        blocks.append(buffer.getvalue())
    return "\n".join(blocks)


def render_json(tables: Iterable[Table]) -> str:
    data = {
        table.title: [dict(zip(table.header, row)) for row in table.rows] for table in tables
    }
    return json.dumps(data, cls=DjangoJSONEncoder, sort_keys=True, indent=2) + "\n"


def render(tables: Sequence[Table], fmt: str) -> str:
    if fmt == "text":
        return render_text(tables)
    if fmt == "tsv":
        return render_tsv(tables)
    if fmt == "json":
        return render_json(tables)
    raise ConfigError(f"Unknown format {fmt!r}, expected one of {', '.join(FORMATS)}")


WER_HEADER = ("scope", "name", "n_ref", "corr", "sub", "del", "ins", "opt_del", "unassigned") + tuple(
    f"{name}%" for name in RATE_NAMES
)


def _wer_row(scope: str, name: str, report: WerReport) -> list:
    if report.n_ref > 0:
        rates = list(report.displayed().values())
    else:
        rates = [None] * len(RATE_NAMES)
    return [
        scope,
        name,
        report.n_ref,
        report.matches,
        report.subs,
        report.dels,
        report.inss,
        report.optional_dels,
        report.n_unassigned,
        *rates,
    ]


def wer_table(report: WerReport, name: str = "all", detail: bool = True) -> Table:
    """
    >>> table = wer_table(WerReport(matches=946, subs=32, dels=22, inss=11), detail=False)
    >>> table.rows[0][-4:]
    [Decimal('3.2'), Decimal('2.2'), Decimal('1.1'), Decimal('6.5')]
    """
    rows = [_wer_row("total", name, report)]
    if detail:
        rows.extend(_wer_row("show", k, v) for k, v in sorted(report.per_show.items()))
        rows.extend(_wer_row("speaker", k, v) for k, v in sorted(report.per_speaker.items()))
    return Table("wer", WER_HEADER, rows)


def confusion_tables(table: ConfusionTable, k: int) -> list[Table]:
    ranked = ranked_confusions(table, k)
    return [
        Table(
            "substitutions",
            ("count", "ref", "hyp"),
            [list(r) for r in ranked.substitutions],
            lambda r: f"{r[0]}: {r[1]} / {r[2]}",
        ),
        Table(
            "deletions",
            ("count", "ref"),
            [list(r) for r in ranked.deletions],
            lambda r: f"{r[0]}: {r[1]}",
        ),
        Table(
            "insertions",
            ("count", "hyp"),
            [list(r) for r in ranked.insertions],
            lambda r: f"{r[0]}: {r[1]}",
        ),
    ]


def breakdown_table(breakdown: Mapping[str, Mapping[str, object]]) -> Table:
    systems = list(next(iter(breakdown.values()), {}))
    return Table(
        "breakdown",
        ("error", *systems),
        [[label, *(values[s] for s in systems)] for label, values in breakdown.items()],
    )


def side_by_side_table(kind: str, systems: Sequence[str], rows: list[list[str]]) -> Table:
    return Table(f"top_{kind}", tuple(systems), rows)


def overlap_table(overlaps: Sequence[tuple[str, str, ErrorOverlap]]) -> Table:
    """
    One row per system pair and error kind: the shared top items and the share
    of each system's errors they cover, in percent.
    """
    rows = [
        [a, b, o.kind, len(o.shared), *o.displayed(), ", ".join(o.shared)]
        for a, b, o in overlaps
    ]
    return Table(
        "error_overlap",
        ("system_a", "system_b", "kind", "n_shared", "share_a", "share_b", "shared"),
        rows,
    )


def comparison_table(comparison: Comparison) -> Table:
    return Table("comparison", ("system", *comparison.test_sets), comparison.rows())


def ablation_table(result: AblationResult) -> Table:
    return Table(
        "hesitation_ablation",
        ("run", "n_ref", "sub", "del", "ins", "wer%"),
        [
            ["baseline", *_ablation_cells(result.baseline)],
            ["no_hesitations", *_ablation_cells(result.dropped)],
            ["delta", None, None, None, None, result.displayed_delta()],
        ],
    )


def _ablation_cells(report: WerReport) -> list:
    return [report.n_ref, report.subs, report.dels, report.inss, report.displayed()["wer"]]


def perplexity_table(rows: Mapping[str, PerplexityStats]) -> Table:
    return Table(
        "perplexity",
        ("model", "sentences", "tokens", "oovs", "logprob", "perplexity"),
        [
            [name, s.sentences, s.tokens, s.oovs, round(s.logprob, 6), round(s.perplexity, 6)]
            for name, s in rows.items()
        ],
    )


def weights_table(names: Sequence[str], weights: Sequence[float], history: Sequence[float]) -> list[Table]:
    return [
        Table("weights", ("model", "weight"), [[n, round(w, 9)] for n, w in zip(names, weights)]),
        Table(
            "em_history",
            ("iteration", "loglik"),
            [[i, round(ll, 6)] for i, ll in enumerate(history)],
        ),
    ]
