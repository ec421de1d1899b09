"""Parse and emit the pipe-delimited annotation formats.

Three line-oriented text formats, one per generation stage::

    tuples         1 | entity - whole (motorcycle)
    questions      1 | Is there a motorcycle?
    dependencies   2 | 1          (``id | 0`` marks a root)

plus the JSON form of a whole graph.  Parsing is total: any input either
yields values or raises/records a structured :class:`LineParseError`.
Whitespace around ``|``, ``-`` and ``,`` never changes the parse.  Args
may contain any character except ``,`` and ``)``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, TextIO

from .errors import ArityError, LineParseError, SelfLoopError
from .graph import (
    Category,
    DependencyEdge,
    QuestionNode,
    SceneGraph,
    SemanticTuple,
    Subcategory,
    build_graph,
)

STRICT = "strict"
LENIENT = "lenient"

_TUPLE_PAYLOAD = re.compile(r"^\s*([a-z_]+)\s*-\s*([a-z_]+)\s*\((.*)\)\s*$")

_CATEGORIES = {c.value: c for c in Category}
_SUBCATEGORIES = {s.value: s for s in Subcategory}


@dataclass(frozen=True, slots=True)
class ParseWarning:
    """A dropped line in lenient mode (the quarantine record)."""

    line_no: int
    reason: str
    raw: str


def _check_mode(mode: str) -> None:
    if mode not in (STRICT, LENIENT):
        raise ValueError(f"mode must be {STRICT!r} or {LENIENT!r}, got {mode!r}")


def _split_line(line_no: int, raw: str, allow_empty_payload: bool) -> tuple[int, str]:
    """Split one line into (id, payload) at the first ``|``."""
    if "|" not in raw:
        raise LineParseError(line_no, "missing '|' delimiter", raw)
    id_part, payload = raw.split("|", 1)
    id_part = id_part.strip()
    payload = payload.strip()
    if not (id_part.isascii() and id_part.isdigit()):
        raise LineParseError(line_no, f"bad id {id_part!r}", raw)
    line_id = int(id_part)
    if line_id < 1:
        raise LineParseError(line_no, "id must be >= 1", raw)
    if not payload and not allow_empty_payload:
        raise LineParseError(line_no, "empty payload", raw)
    return line_id, payload


def _run_lines(text, mode, warnings, allow_empty_payload, handle):
    _check_mode(mode)
    out = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            line_id, payload = _split_line(line_no, raw, allow_empty_payload)
            out.extend(handle(line_no, line_id, payload, raw))
        except SelfLoopError:
            if mode == STRICT:
                raise
            if warnings is not None:
                warnings.append(ParseWarning(line_no, "self-loop", raw))
        except LineParseError as err:
            if mode == STRICT:
                raise
            if warnings is not None:
                warnings.append(ParseWarning(line_no, err.reason, raw))
    return out


def parse_tuples(
    text: str,
    mode: str = STRICT,
    warnings: list[ParseWarning] | None = None,
) -> list[SemanticTuple]:
    """Parse ``id | category - subcategory (args)`` lines.

    In strict mode the first bad line raises LineParseError; in lenient
    mode bad lines are dropped and recorded in ``warnings``.
    """

    def handle(line_no, line_id, payload, raw):
        m = _TUPLE_PAYLOAD.match(payload)
        if not m:
            raise LineParseError(line_no, "payload does not match 'category - subcategory (args)'", raw)
        cat_tok, sub_tok, args_blob = m.groups()
        if cat_tok not in _CATEGORIES:
            raise LineParseError(line_no, f"unknown category {cat_tok!r}", raw)
        if sub_tok not in _SUBCATEGORIES:
            raise LineParseError(line_no, f"unknown subcategory {sub_tok!r}", raw)
        args = tuple(a.strip() for a in args_blob.split(","))
        if any(not a for a in args):
            raise LineParseError(line_no, "empty arg", raw)
        if any(")" in a or "(" in a for a in args):
            raise LineParseError(line_no, "parentheses are not allowed inside args", raw)
        try:
            t = SemanticTuple(line_id, _CATEGORIES[cat_tok], _SUBCATEGORIES[sub_tok], args)
        except ArityError as err:
            raise LineParseError(line_no, str(err), raw) from None
        return [t]

    return _run_lines(text, mode, warnings, False, handle)


def parse_questions(
    text: str,
    mode: str = STRICT,
    warnings: list[ParseWarning] | None = None,
) -> list[QuestionNode]:
    """Parse ``id | question text`` lines; tuple_id is the line id."""

    def handle(line_no, line_id, payload, raw):
        return [QuestionNode(line_id, payload, line_id)]

    return _run_lines(text, mode, warnings, False, handle)


def parse_dependencies(
    text: str,
    mode: str = STRICT,
    warnings: list[ParseWarning] | None = None,
) -> list[DependencyEdge]:
    """Parse ``child | parent,parent,...`` lines.

    A parent list of ``0`` (or nothing at all) marks a root and yields no
    edges.  A child listing itself raises SelfLoopError.
    """

    def handle(line_no, line_id, payload, raw):
        edges = []
        tokens = [t.strip() for t in payload.split(",")] if payload else []
        for tok in tokens:
            if not tok:
                raise LineParseError(line_no, "empty parent entry", raw)
            if not (tok.isascii() and tok.isdigit()):
                raise LineParseError(line_no, f"bad parent id {tok!r}", raw)
            parent = int(tok)
            if parent == 0:
                continue
            if parent == line_id:
                raise SelfLoopError(line_no, f"question {line_id} lists itself as parent", raw)
            edges.append(DependencyEdge(parent, line_id))
        return edges

    return _run_lines(text, mode, warnings, True, handle)


# ---------------------------------------------------------------------------
# Encoding


def encode_tuple(t: SemanticTuple) -> str:
    args = ", ".join(t.args)
    return f"{t.id} | {t.category.value} - {t.subcategory.value} ({args})"


def encode_graph(g: SceneGraph) -> tuple[str, str, str]:
    """Emit the three stage texts; re-parsing them rebuilds ``g``."""
    tuples_text = "\n".join(encode_tuple(t) for t in g.tuples)
    questions_text = "\n".join(f"{q.id} | {q.text}" for q in g.questions)
    dep_lines = []
    for qid in g.question_ids:
        parents = g.parents[qid]
        dep_lines.append(f"{qid} | {','.join(map(str, parents)) if parents else '0'}")
    return tuples_text, questions_text, "\n".join(dep_lines)


def parse_graph(
    prompt_id: str,
    tuples_text: str,
    questions_text: str,
    dependencies_text: str,
    mode: str = STRICT,
    warnings: list[ParseWarning] | None = None,
) -> SceneGraph:
    """Parse all three stage texts and assemble the validated graph."""
    tuples = parse_tuples(tuples_text, mode, warnings)
    questions = parse_questions(questions_text, mode, warnings)
    edges = parse_dependencies(dependencies_text, mode, warnings)
    return build_graph(tuples, questions, edges, prompt_id=prompt_id)


# ---------------------------------------------------------------------------
# JSON persistence: one object per prompt


def graph_to_dict(g: SceneGraph) -> dict:
    return {
        "prompt_id": g.prompt_id,
        "tuples": [
            {
                "id": t.id,
                "category": t.category.value,
                "subcategory": t.subcategory.value,
                "args": list(t.args),
            }
            for t in g.tuples
        ],
        "questions": [
            {"id": q.id, "text": q.text, "tuple_id": q.tuple_id} for q in g.questions
        ],
        "edges": [[e.parent_id, e.child_id] for e in g.edges],
    }


def graph_from_dict(d: dict) -> SceneGraph:
    tuples = [
        SemanticTuple(
            t["id"], Category(t["category"]), Subcategory(t["subcategory"]), tuple(t["args"])
        )
        for t in d["tuples"]
    ]
    questions = [QuestionNode(q["id"], q["text"], q["tuple_id"]) for q in d["questions"]]
    edges = [DependencyEdge(p, c) for p, c in d["edges"]]
    return build_graph(tuples, questions, edges, prompt_id=d["prompt_id"])


def write_graphs_jsonl(graphs: Iterable[SceneGraph], fp: TextIO) -> None:
    for g in graphs:
        fp.write(json.dumps(graph_to_dict(g)) + "\n")


def read_graphs_jsonl(fp: TextIO) -> list[SceneGraph]:
    out = []
    for line in fp:
        if line.strip():
            out.append(graph_from_dict(json.loads(line)))
    return out
