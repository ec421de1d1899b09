"""Aggregate evaluations into the standard report tables.

Tables: per-model mean item score grouped by prompt source, per-model
mean question score grouped by semantic subcategory, and (when Likert
ratings are present) rank correlations between model scores and human
ratings.  CSV cells are rounded half-even to 3 decimals; the JSON
summary keeps full precision.  Identical inputs produce byte-identical
CSVs.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from decimal import ROUND_HALF_EVEN, Decimal

from . import __version__
from .dataset import SOURCES, LikertRecord, PromptRecord
from .errors import DegenerateInputError, KeyMismatchError, ReportIntegrityError
from .graph import SUBCATEGORIES, Category, SceneGraph, Subcategory
from .metrics import CorrelationResult, rank_correlations
from .scoring import ItemEvaluation

MIN_GROUP_N = 30  # cells under this sample count get flagged, not hidden

SUBCATEGORY_ORDER: tuple[str, ...] = tuple(
    f"{cat.value}/{sub.value}"
    for cat in Category
    for sub in sorted(Subcategory, key=lambda s: s.value)
    if sub in SUBCATEGORIES[cat]
)


def default_model_of(image_ref: str) -> str:
    """Manifest convention: image refs look like ``model_name/prompt_id.png``."""
    return image_ref.split("/", 1)[0] if "/" in image_ref else "default"


@dataclass(frozen=True)
class CellStat:
    mean: float
    n: int


@dataclass(frozen=True)
class EvalReport:
    by_source: dict[str, dict[str, CellStat]]
    by_subcategory: dict[str, dict[str, CellStat]] | None
    correlations: dict[str, CorrelationResult] | None
    qg_summary: dict | None
    low_n: tuple[tuple[str, str, str, int], ...]  # (table, model, group, n)
    provenance: dict


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _config_hash(config: Mapping | None) -> str:
    blob = json.dumps(dict(config or {}), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def build_report(
    evaluations: Iterable[ItemEvaluation],
    prompts: Iterable[PromptRecord],
    graphs: Mapping[str, SceneGraph] | None = None,
    likert: Iterable[LikertRecord] | None = None,
    qg_summary: dict | None = None,
    *,
    min_group_n: int = MIN_GROUP_N,
    model_of=default_model_of,
    config: Mapping | None = None,
    timestamp: str | None = None,
) -> EvalReport:
    """Group raw evaluations into report tables with provenance.

    Items whose graph was empty (average undefined) are left out of the
    means.  Raises KeyMismatchError when an evaluation references an
    unknown prompt or a Likert record references an unknown item.
    """
    evaluations = list(evaluations)
    prompt_by_id = {p.prompt_id: p for p in prompts}
    for ev in evaluations:
        if ev.prompt_id not in prompt_by_id:
            raise KeyMismatchError(f"evaluation references unknown prompt {ev.prompt_id!r}")

    scored = [ev for ev in evaluations if ev.average_score is not None]

    # table 1: item averages by (model, prompt source)
    src_cells: dict[tuple[str, str], list[float]] = {}
    for ev in scored:
        model = model_of(ev.image_ref)
        source = prompt_by_id[ev.prompt_id].source
        src_cells.setdefault((model, source), []).append(ev.average_score)
        src_cells.setdefault((model, "overall"), []).append(ev.average_score)
    models = sorted({m for m, _ in src_cells})
    by_source = {
        model: {
            group: CellStat(_mean(vals), len(vals))
            for (m, group), vals in sorted(src_cells.items())
            if m == model
        }
        for model in models
    }

    # table 2: question scores by (model, tuple subcategory)
    by_subcategory = None
    if graphs is not None:
        sub_cells: dict[tuple[str, str], list[float]] = {}
        for ev in scored:
            g = graphs.get(ev.prompt_id)
            if g is None:
                raise KeyMismatchError(f"no graph loaded for prompt {ev.prompt_id!r}")
            model = model_of(ev.image_ref)
            for qid, score in ev.scores.items():
                t = g.get_tuple(g.get_question(qid).tuple_id)
                key = f"{t.category.value}/{t.subcategory.value}"
                sub_cells.setdefault((model, key), []).append(float(score))
                sub_cells.setdefault((model, "overall"), []).append(float(score))
        by_subcategory = {
            model: {
                group: CellStat(_mean(vals), len(vals))
                for (m, group), vals in sorted(sub_cells.items())
                if m == model
            }
            for model in sorted({m for m, _ in sub_cells})
        }

    # correlation block: model item scores vs mean human Likert ratings
    correlations = None
    if likert is not None:
        ratings: dict[tuple[str, str], list[int]] = {}
        for rec in likert:
            ratings.setdefault((rec.prompt_id, rec.image_ref), []).append(rec.rating)
        ev_by_key = {(ev.prompt_id, ev.image_ref): ev for ev in scored}
        missing = sorted(k for k in ratings if k not in ev_by_key)
        if missing:
            raise KeyMismatchError(
                f"{len(missing)} rated item(s) have no evaluation", missing_left=missing
            )
        paired: dict[str, tuple[list[float], list[float]]] = {}
        for key in sorted(ratings):
            ev = ev_by_key[key]
            model = model_of(ev.image_ref)
            for name in (model, "all"):
                xs, ys = paired.setdefault(name, ([], []))
                xs.append(_mean(ratings[key]))
                ys.append(ev.average_score)
        correlations = {}
        for name, (xs, ys) in sorted(paired.items()):
            try:
                correlations[name] = rank_correlations(xs, ys)
            except DegenerateInputError:
                continue

    low_n: list[tuple[str, str, str, int]] = []
    for table_name, table in (("by_source", by_source), ("by_subcategory", by_subcategory)):
        if table is None:
            continue
        for model, row in table.items():
            for group, cell in row.items():
                if cell.n < min_group_n:
                    low_n.append((table_name, model, group, cell.n))

    provenance = {
        "engine": f"dsg-eval {__version__}",
        "config_hash": _config_hash(config),
        "backends": sorted({a.answerer_id for ev in evaluations for a in ev.answers}),
        "items": len(evaluations),
        "items_scored": len(scored),
        "timestamp": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return EvalReport(
        by_source=by_source,
        by_subcategory=by_subcategory,
        correlations=correlations,
        qg_summary=qg_summary,
        low_n=tuple(low_n),
        provenance=provenance,
    )


def verify_report(
    report: EvalReport,
    evaluations: Iterable[ItemEvaluation],
    prompts: Iterable[PromptRecord],
    graphs: Mapping[str, SceneGraph] | None = None,
    *,
    model_of=default_model_of,
) -> None:
    """Recompute every mean from the raw records and compare exactly."""
    fresh = build_report(
        evaluations,
        prompts,
        graphs=graphs if report.by_subcategory is not None else None,
        model_of=model_of,
        timestamp=report.provenance.get("timestamp"),
    )
    for table_name, got, want in (
        ("by_source", report.by_source, fresh.by_source),
        ("by_subcategory", report.by_subcategory, fresh.by_subcategory),
    ):
        if (got is None) != (want is None):
            raise ReportIntegrityError(f"{table_name}: presence mismatch")
        if got is None:
            continue
        if got != want:
            raise ReportIntegrityError(f"{table_name}: cells do not match recomputation")


# ---------------------------------------------------------------------------
# Emission


def format_cell(value: float | None) -> str:
    """Half-even rounding to 3 decimals; empty string for missing."""
    if value is None:
        return ""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


def write_atomic(path: str | Path, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fp:
            fp.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _group_columns(table: dict[str, dict[str, CellStat]], canonical: Sequence[str]) -> list[str]:
    present = {g for row in table.values() for g in row if g != "overall"}
    cols = [g for g in canonical if g in present]
    cols += sorted(present - set(canonical))
    return cols + ["overall"]


def _table_csv(table: dict[str, dict[str, CellStat]], canonical: Sequence[str], counts: bool) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = _group_columns(table, canonical)
    writer.writerow(["model"] + cols)
    for model in sorted(table):
        row: list[str] = [model]
        for group in cols:
            cell = table[model].get(group)
            if cell is None:
                row.append("")
            else:
                row.append(str(cell.n) if counts else format_cell(cell.mean))
        writer.writerow(row)
    return buf.getvalue()


def _correlations_csv(correlations: dict[str, CorrelationResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "spearman_rho", "kendall_tau", "n"])
    for name in sorted(correlations):
        c = correlations[name]
        writer.writerow([name, format_cell(c.spearman_rho), format_cell(c.kendall_tau), c.n])
    return buf.getvalue()


def report_summary_dict(report: EvalReport) -> dict:
    def table_obj(table):
        if table is None:
            return None
        return {
            model: {g: {"mean": cell.mean, "n": cell.n} for g, cell in row.items()}
            for model, row in table.items()
        }

    correlations = None
    if report.correlations is not None:
        correlations = {
            name: {
                "spearman_rho": c.spearman_rho,
                "kendall_tau": c.kendall_tau,
                "n": c.n,
                "ties": {"x": c.tie_counts.x, "y": c.tie_counts.y, "both": c.tie_counts.both},
            }
            for name, c in report.correlations.items()
        }
    return {
        "by_source": table_obj(report.by_source),
        "by_subcategory": table_obj(report.by_subcategory),
        "correlations": correlations,
        "qg_summary": report.qg_summary,
        "low_n": [list(entry) for entry in report.low_n],
        "provenance": report.provenance,
    }


def write_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write the CSV tables and JSON summary; returns the paths written."""
    out_dir = Path(out_dir)
    written: list[Path] = []

    def emit(name: str, data: str) -> None:
        path = out_dir / name
        write_atomic(path, data)
        written.append(path)

    emit("by_source.csv", _table_csv(report.by_source, SOURCES, counts=False))
    emit("by_source_counts.csv", _table_csv(report.by_source, SOURCES, counts=True))
    if report.by_subcategory is not None:
        emit("by_subcategory.csv", _table_csv(report.by_subcategory, SUBCATEGORY_ORDER, counts=False))
        emit(
            "by_subcategory_counts.csv",
            _table_csv(report.by_subcategory, SUBCATEGORY_ORDER, counts=True),
        )
    if report.correlations is not None:
        emit("correlations.csv", _correlations_csv(report.correlations))
    emit(
        "summary.json",
        json.dumps(report_summary_dict(report), indent=2, sort_keys=True) + "\n",
    )
    return written
