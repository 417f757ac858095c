"""Tests for the HTML report context builder."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from src.html_reporter import (
    REPORT_FILENAME,
    STATUS_COLORS,
    ReportError,
    build_report_context,
    generate_html_report,
    render_html_report,
)

FIXED_TS = "2026-04-17T12:00:00"

SUMMARY = {
    "preset": "fig3d_weaklinks",
    "description": "depleted atoms with weak links at several distances",
    "seed": 7,
    "tool_version": "1.0.0",
    "scalars": {
        "weak_link_epsilon": 0.31622776601683794,
        "distances": {"4": {"slope": 0.25, "steady": True}, "10": {"slope": None, "steady": False}},
        "rows": [{"g": 0.0, "tau_fit": 0.5}, {"g": 4.0, "tau_fit": None}],
        "window": [200.0, 400.0],
    },
    "checks": [
        {"name": "linear asymptote at d=4", "passed": True, "detail": "r2 0.99"},
        {"name": "no linear asymptote at d=10", "passed": False, "detail": "<b>r2</b> 0.99"},
    ],
    "tables": ["depleted.csv"],
}

MANIFEST = "# bh-depletion-sim 1.0.0 manifest\nschema_version = 1\npreset = fig3d_weaklinks\nseed = 7\nL = 20\n"


@pytest.fixture
def run_dir(tmp_path: Path) -> Path:
    d = tmp_path / "run-1"
    d.mkdir()
    (d / "summary.json").write_text(json.dumps(SUMMARY))
    (d / "manifest.txt").write_text(MANIFEST)
    return d


def _ctx(run_dir: Path) -> dict:
    return build_report_context(run_dir, tool_version="2.0.0", generated_at=FIXED_TS)


# ---------------------------------------------------------------------------
# Context
# ---------------------------------------------------------------------------


def test_build_context_metadata(run_dir: Path):
    meta = _ctx(run_dir)["metadata"]
    assert meta == {
        "preset": "fig3d_weaklinks",
        "description": SUMMARY["description"],
        "seed": 7,
        "run_dir": "run-1",
        "generated_at": FIXED_TS,
        "tool_version": "2.0.0",
        "run_tool_version": "1.0.0",
    }


def test_build_context_checks(run_dir: Path):
    ctx = _ctx(run_dir)
    assert [c["status"] for c in ctx["checks"]] == ["passed", "failed"]
    assert ctx["checks"][1]["color"] == STATUS_COLORS["failed"]
    assert ctx["check_counts"] == {"passed": 1, "failed": 1}


def test_build_context_flattens_scalars(run_dir: Path):
    rows = {r["name"]: r["value"] for r in _ctx(run_dir)["scalars"]}
    assert rows["weak_link_epsilon"] == "0.316228"
    assert rows["distances.4.slope"] == "0.25"
    assert rows["distances.4.steady"] == "yes"
    assert rows["distances.10.slope"] == "n/a"
    assert rows["window"] == "200, 400"
    assert "rows" not in rows


def test_build_context_row_tables(run_dir: Path):
    tables = _ctx(run_dir)["scalar_tables"]
    assert tables == [{"name": "rows", "columns": ["g", "tau_fit"], "rows": [["0", "0.5"], ["4", "n/a"]]}]


def test_build_context_parameters_from_manifest(run_dir: Path):
    params = {p["name"]: p["value"] for p in _ctx(run_dir)["parameters"]}
    assert params == {"schema_version": "1", "preset": "fig3d_weaklinks", "seed": "7", "L": "20"}


def test_build_context_without_manifest(run_dir: Path):
    (run_dir / "manifest.txt").unlink()
    assert _ctx(run_dir)["parameters"] == []


def test_build_context_missing_summary(tmp_path: Path):
    with pytest.raises(ReportError, match="summary not found"):
        build_report_context(tmp_path, tool_version="2.0.0")


def test_build_context_default_timestamp(run_dir: Path):
    ctx = build_report_context(run_dir, tool_version="2.0.0")
    assert ctx["metadata"]["generated_at"].startswith("20")


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def test_render_html_contains_key_markers(run_dir: Path):
    html = render_html_report(_ctx(run_dir))
    assert html.startswith("<!DOCTYPE html>")
    assert "fig3d_weaklinks" in html
    assert "linear asymptote at d=4" in html
    assert STATUS_COLORS["passed"] in html
    assert '<a href="depleted.csv">' in html
    assert "distances.4.slope" in html


def test_render_html_escapes_details(run_dir: Path):
    html = render_html_report(_ctx(run_dir))
    assert "&lt;b&gt;r2&lt;/b&gt;" in html
    assert "<b>r2</b>" not in html


def test_render_html_without_checks(run_dir: Path):
    summary = {**SUMMARY, "checks": []}
    (run_dir / "summary.json").write_text(json.dumps(summary))
    assert "No checks for this preset." in render_html_report(_ctx(run_dir))


def test_generate_html_report_writes_file(run_dir: Path):
    out = generate_html_report(run_dir, tool_version="2.0.0", generated_at=FIXED_TS)
    assert out == run_dir / REPORT_FILENAME
    assert out.read_text().startswith("<!DOCTYPE html>")


def test_generate_html_report_creates_parent_dirs(run_dir: Path, tmp_path: Path):
    out = tmp_path / "nested" / "deep" / "r.html"
    assert generate_html_report(run_dir, tool_version="2.0.0", html_path=out) == out
    assert out.exists()
