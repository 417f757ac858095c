"""Context building and HTML rendering of a run's summary page."""

from __future__ import annotations

import json
from datetime import datetime
from pathlib import Path
from typing import Any

from jinja2 import Environment, FileSystemLoader, select_autoescape

from .experiment_config import parse_config_text

REPORT_FILENAME = "report.html"

STATUS_COLORS = {
    "passed": "#28a745",
    "failed": "#dc3545",
}


class ReportError(Exception):
    """Raised when a run directory lacks the files a report is built from."""


def _format_value(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, list):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def _flatten(scalars: dict[str, Any], prefix: str = "") -> tuple[list[dict], list[dict]]:
    """Split summary scalars into (name, value) rows and embedded row tables."""
    rows: list[dict] = []
    tables: list[dict] = []
    for key in sorted(scalars):
        value = scalars[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            sub_rows, sub_tables = _flatten(value, prefix=f"{name}.")
            rows.extend(sub_rows)
            tables.extend(sub_tables)
        elif isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            columns = list(value[0])
            tables.append(
                {
                    "name": name,
                    "columns": columns,
                    "rows": [[_format_value(item.get(c)) for c in columns] for item in value],
                }
            )
        else:
            rows.append({"name": name, "value": _format_value(value)})
    return rows, tables


def build_report_context(
    run_dir: Path,
    tool_version: str,
    generated_at: str | None = None,
) -> dict:
    """Read ``summary.json`` and ``manifest.txt`` from *run_dir* into a template context.

    Pure function; no side effects other than reading the input files.
    """
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    manifest_path = run_dir / "manifest.txt"
    if not summary_path.is_file():
        raise ReportError(f"summary not found: {summary_path}")
    if generated_at is None:
        generated_at = datetime.now().isoformat(timespec="seconds")

    summary = json.loads(summary_path.read_text())
    parameters: list[dict] = []
    if manifest_path.is_file():
        entries, _ = parse_config_text(manifest_path.read_text())
        parameters = [{"name": k, "value": v} for k, v in entries.items()]

    scalar_rows, scalar_tables = _flatten(summary.get("scalars", {}))
    checks = [
        {**c, "status": "passed" if c["passed"] else "failed", "color": STATUS_COLORS["passed" if c["passed"] else "failed"]}
        for c in summary.get("checks", [])
    ]
    n_passed = sum(c["passed"] for c in checks)

    return {
        "metadata": {
            "preset": summary.get("preset", ""),
            "description": summary.get("description", ""),
            "seed": summary.get("seed"),
            "run_dir": run_dir.name,
            "generated_at": generated_at,
            "tool_version": tool_version,
            "run_tool_version": summary.get("tool_version", ""),
        },
        "checks": checks,
        "check_counts": {"passed": n_passed, "failed": len(checks) - n_passed},
        "scalars": scalar_rows,
        "scalar_tables": scalar_tables,
        "parameters": parameters,
        "tables": summary.get("tables", []),
    }


def render_html_report(context: dict) -> str:
    """Apply the Jinja2 template to the context and return HTML as a string.

    Template file is ``src/templates/report.html.j2``.
    """
    template_dir = Path(__file__).parent / "templates"
    env = Environment(
        loader=FileSystemLoader(template_dir),
        autoescape=select_autoescape(["html", "j2"]),
        trim_blocks=True,
        lstrip_blocks=True,
    )
    template = env.get_template("report.html.j2")
    return template.render(context)


def generate_html_report(
    run_dir: Path,
    tool_version: str,
    html_path: Path | None = None,
    generated_at: str | None = None,
) -> Path:
    """Build context from a run directory, render it and write ``report.html``."""
    run_dir = Path(run_dir)
    context = build_report_context(run_dir, tool_version, generated_at)
    html = render_html_report(context)
    html_path = run_dir / REPORT_FILENAME if html_path is None else Path(html_path)
    html_path.parent.mkdir(parents=True, exist_ok=True)
    html_path.write_text(html)
    return html_path
