"""Loaders for prompt files, Likert ratings, and per-question human answers.

Canonical storage is JSONL; files ending in ``.tsv`` are read as
tab-separated with a header row (annotation spreadsheets export that
way).  Loading validates every row and raises one SchemaError carrying
all violations with their row numbers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, TextIO

from .errors import SchemaError
from .graph import SceneGraph

SOURCES: tuple[str, ...] = (
    "tifa160",
    "stanford_paragraphs",
    "localized_narratives",
    "countbench",
    "vrd",
    "diffusiondb",
    "midjourney",
    "posescript",
    "whoops",
    "drawtext_creative",
)


@dataclass(frozen=True, slots=True)
class PromptRecord:
    prompt_id: str
    text: str
    source: str
    notes: str | None = None


@dataclass(frozen=True, slots=True)
class LikertRecord:
    prompt_id: str
    image_ref: str
    rater_id: str
    rating: int  # 1-5 text-image consistency


class HumanAnswer(str, Enum):
    YES = "yes"
    NO = "no"
    INVALID = "invalid"  # rater deemed the question unanswerable for this image


@dataclass(frozen=True, slots=True)
class HumanQuestionAnswer:
    prompt_id: str
    image_ref: str
    question_id: int
    rater_id: str
    answer: HumanAnswer


def _text_hash_id(text: str) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]


def _iter_rows(path: str | Path):
    """Yield (row_no, dict) from JSONL or headered TSV; collect parse errors."""
    path = Path(path)
    violations: list[tuple[int, str]] = []
    rows: list[tuple[int, dict]] = []
    raw = path.read_text("utf-8")
    if path.suffix.lower() == ".tsv":
        reader = csv.DictReader(io.StringIO(raw), delimiter="\t")
        if reader.fieldnames is None:
            raise SchemaError(str(path), [(1, "missing header row")])
        for row_no, rec in enumerate(reader, start=2):
            rows.append((row_no, {k: (v if v != "" else None) for k, v in rec.items()}))
    else:
        for row_no, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                violations.append((row_no, f"bad JSON: {err.msg}"))
                continue
            if not isinstance(obj, dict):
                violations.append((row_no, "row is not a JSON object"))
                continue
            rows.append((row_no, obj))
    return rows, violations


def _need_str(obj: dict, key: str, row_no: int, violations: list) -> str | None:
    val = obj.get(key)
    if not isinstance(val, str) or not val.strip():
        violations.append((row_no, f"missing or empty field {key!r}"))
        return None
    return val


def load_prompts(path: str | Path) -> list[PromptRecord]:
    """Load prompt records; a missing prompt_id falls back to a text hash."""
    rows, violations = _iter_rows(path)
    records: list[PromptRecord] = []
    seen_ids: set[str] = set()
    for row_no, obj in rows:
        text = _need_str(obj, "text", row_no, violations)
        source = _need_str(obj, "source", row_no, violations)
        if source is not None and source not in SOURCES:
            violations.append((row_no, f"unknown source {source!r}"))
            source = None
        if text is None or source is None:
            continue
        prompt_id = obj.get("prompt_id") or _text_hash_id(text)
        if not isinstance(prompt_id, str):
            violations.append((row_no, "prompt_id must be a string"))
            continue
        if prompt_id in seen_ids:
            violations.append((row_no, f"duplicate prompt_id {prompt_id!r}"))
            continue
        seen_ids.add(prompt_id)
        notes = obj.get("notes")
        if notes is not None and not isinstance(notes, str):
            violations.append((row_no, "notes must be a string"))
            continue
        records.append(PromptRecord(prompt_id, text, source, notes))
    if violations:
        raise SchemaError(str(path), violations)
    return records


def load_likert(path: str | Path) -> list[LikertRecord]:
    rows, violations = _iter_rows(path)
    records: list[LikertRecord] = []
    seen: set[tuple[str, str, str]] = set()
    for row_no, obj in rows:
        prompt_id = _need_str(obj, "prompt_id", row_no, violations)
        image_ref = _need_str(obj, "image_ref", row_no, violations)
        rater_id = _need_str(obj, "rater_id", row_no, violations)
        rating = obj.get("rating")
        if isinstance(rating, str) and rating.isdigit():
            rating = int(rating)
        if not isinstance(rating, int) or isinstance(rating, bool) or not 1 <= rating <= 5:
            violations.append((row_no, f"rating must be an integer 1..5, got {obj.get('rating')!r}"))
            continue
        if prompt_id is None or image_ref is None or rater_id is None:
            continue
        key = (prompt_id, image_ref, rater_id)
        if key in seen:
            violations.append((row_no, f"duplicate rating for {key}"))
            continue
        seen.add(key)
        records.append(LikertRecord(prompt_id, image_ref, rater_id, rating))
    if violations:
        raise SchemaError(str(path), violations)
    return records


def load_human_answers(path: str | Path) -> list[HumanQuestionAnswer]:
    rows, violations = _iter_rows(path)
    records: list[HumanQuestionAnswer] = []
    seen: set[tuple[str, str, int, str]] = set()
    for row_no, obj in rows:
        prompt_id = _need_str(obj, "prompt_id", row_no, violations)
        image_ref = _need_str(obj, "image_ref", row_no, violations)
        rater_id = _need_str(obj, "rater_id", row_no, violations)
        qid = obj.get("question_id")
        if isinstance(qid, str) and qid.isdigit():
            qid = int(qid)
        if not isinstance(qid, int) or isinstance(qid, bool) or qid < 1:
            violations.append((row_no, f"question_id must be a positive integer, got {obj.get('question_id')!r}"))
            continue
        raw_answer = obj.get("answer")
        answer = None
        if isinstance(raw_answer, str):
            try:
                answer = HumanAnswer(raw_answer.strip().lower())
            except ValueError:
                pass
        if answer is None:
            violations.append((row_no, f"answer must be yes/no/invalid, got {raw_answer!r}"))
            continue
        if prompt_id is None or image_ref is None or rater_id is None:
            continue
        key = (prompt_id, image_ref, qid, rater_id)
        if key in seen:
            violations.append((row_no, f"duplicate answer for {key}"))
            continue
        seen.add(key)
        records.append(HumanQuestionAnswer(prompt_id, image_ref, qid, rater_id, answer))
    if violations:
        raise SchemaError(str(path), violations)
    return records


# ---------------------------------------------------------------------------
# Serialization (round-trip partners of the loaders)


def write_prompts_jsonl(records: Iterable[PromptRecord], fp: TextIO) -> None:
    for r in records:
        obj = {"prompt_id": r.prompt_id, "text": r.text, "source": r.source}
        if r.notes is not None:
            obj["notes"] = r.notes
        fp.write(json.dumps(obj) + "\n")


def write_likert_jsonl(records: Iterable[LikertRecord], fp: TextIO) -> None:
    for r in records:
        fp.write(
            json.dumps(
                {
                    "prompt_id": r.prompt_id,
                    "image_ref": r.image_ref,
                    "rater_id": r.rater_id,
                    "rating": r.rating,
                }
            )
            + "\n"
        )


def write_human_answers_jsonl(records: Iterable[HumanQuestionAnswer], fp: TextIO) -> None:
    for r in records:
        fp.write(
            json.dumps(
                {
                    "prompt_id": r.prompt_id,
                    "image_ref": r.image_ref,
                    "question_id": r.question_id,
                    "rater_id": r.rater_id,
                    "answer": r.answer.value,
                }
            )
            + "\n"
        )


def check_references(
    human_answers: Iterable[HumanQuestionAnswer],
    graphs: Mapping[str, SceneGraph],
) -> list[str]:
    """List (never drop) answers whose (prompt, question) keys do not resolve."""
    problems = []
    for rec in human_answers:
        g = graphs.get(rec.prompt_id)
        if g is None:
            problems.append(f"answer references unknown prompt {rec.prompt_id!r}")
        elif not 1 <= rec.question_id <= len(g.questions):
            problems.append(
                f"answer references unknown question {rec.question_id} of prompt {rec.prompt_id!r}"
            )
    return problems
