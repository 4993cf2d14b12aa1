# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Report emitters for evaluation reports and ablation tables.

Every handler takes an ``EvalReport`` or ``AblationTable`` and returns text.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

from ._schema import ReportFormat
from .evaluation import EvalReport
from .exceptions import ConfigError
from .jinja import render_template
from .utils import write_text_atomic

logger = logging.getLogger(__name__)

EVAL_TABLE = """\
salad {{ salad_version }} detection report
{{ "%-20s" | format("class") }}{% for t in thresholds %}{{ "%9s" | format("@%g" | format(t)) }}{% endfor %}

{% for name, values in rows %}
{{ "%-20s" | format(name) }}{% for v in values %}{{ "%9.4f" | format(v) }}{% endfor %}

{% endfor %}
{{ "%-20s" | format("mAP") }}{% for v in means %}{{ "%9.4f" | format(v) }}{% endfor %}

average mAP: {{ "%.4f" | format(average) }}
"""

ABLATION_TABLE = """\
salad {{ salad_version }} ablation: {{ suite }} (seeds {{ seeds | join(", ") }}, {{ runs }} training runs)
{{ "%-22s" | format("variant") }}{% for t in thresholds %}{{ "%18s" | format("@%g" | format(t)) }}{% endfor %}

{% for name, cells in rows %}
{{ "%-22s" | format(name) }}{% for mean, std in cells %}{{ "%18s" | format("%.4f ± %.4f" | format(mean, std)) }}{% endfor %}

{% endfor %}
"""

EXTENSIONS = {
    ReportFormat.TABLE: "txt",
    ReportFormat.CSV: "csv",
    ReportFormat.JSON: "json",
}


def table_output(result) -> str:
    if isinstance(result, EvalReport):
        class_ids = sorted({c for per in result.class_ap.values() for c in per})
        rows = [
            (result.class_label(c), [result.class_ap[t][c] for t in result.thresholds])
            for c in class_ids
        ]
        return render_template(
            EVAL_TABLE,
            thresholds=result.thresholds,
            rows=rows,
            means=[result.mean_ap[t] for t in result.thresholds],
            average=result.average,
        )
    rows = [
        (row.label, [(row.mean(t), row.std(t)) for t in result.thresholds]) for row in result.rows
    ]
    return render_template(
        ABLATION_TABLE,
        suite=str(result.suite),
        seeds=[str(s) for s in result.seeds],
        runs=result.training_runs,
        thresholds=result.thresholds,
        rows=rows,
    )


def csv_output(result) -> str:
    records = result.to_records()
    buffer = io.StringIO()
    if records:
        writer = csv.DictWriter(buffer, fieldnames=list(records[0]), lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow({k: f"{v:.12g}" if isinstance(v, float) else v for k, v in record.items()})
    return buffer.getvalue()


def json_output(result) -> str:
    return json.dumps(result.to_records(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


OUTPUT_HANDLERS = {
    ReportFormat.TABLE: table_output,
    ReportFormat.CSV: csv_output,
    ReportFormat.JSON: json_output,
}


def render_report(result, fmt: str) -> str:
    handler = OUTPUT_HANDLERS.get(fmt)
    if not handler:
        raise ConfigError(
            f"report format '{fmt}' is not recognized! "
            f"Available formats: {tuple(str(k) for k in OUTPUT_HANDLERS)}"
        )
    return handler(result)


def write_reports(result, out_dir: str | Path, stem: str) -> list[Path]:
    """Write the report in every format next to each other."""
    paths = []
    for fmt, handler in OUTPUT_HANDLERS.items():
        path = Path(out_dir, f"{stem}.{EXTENSIONS[fmt]}")
        write_text_atomic(path, handler(result))
        logger.info("report: '%s' created '%s'.", fmt, path)
        paths.append(path)
    return paths
