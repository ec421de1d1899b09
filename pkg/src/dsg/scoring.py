"""Dependency-aware answering and per-item score aggregation.

Two modes produce identical scores:

* ``zero_out`` — ask every question, then walk the DAG in topological
  order forcing a node's score to 0 whenever any parent ended at 0 (so a
  failed parent zeroes its whole subtree through already-zeroed
  intermediates).
* ``skip`` — walk in topological order and never send a question whose
  parents are not all scored 1; such questions are recorded SKIPPED with
  score 0.  Same numbers, fewer backend calls, and the "no motorcycle,
  but the motorcycle is blue" class of invalid query cannot occur.

A skipped or failed question stays in the denominator: the item average
is the sum of 0/1 scores over the full question count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence, TextIO

from .errors import BackendError, DsgError
from .graph import SceneGraph, topological_order

ZERO_OUT = "zero_out"
SKIP = "skip"

FAIL_ITEM = "fail"
ZERO_AND_FLAG = "zero"


class Answer(str, Enum):
    YES = "yes"
    NO = "no"
    SKIPPED = "skipped"


@dataclass(frozen=True, slots=True)
class AnswerRecord:
    question_id: int
    answer: Answer
    raw_text: str
    answerer_id: str


@dataclass(frozen=True, slots=True)
class Flag:
    """Per-question oddity worth surfacing (unparsed reply, backend error)."""

    question_id: int
    kind: str
    detail: str = ""


@dataclass(frozen=True)
class ItemEvaluation:
    """All answers and scores for one (prompt, image) pair."""

    prompt_id: str
    image_ref: str
    answers: tuple[AnswerRecord, ...]
    scores: dict[int, int]
    average_score: float | None
    flags: tuple[Flag, ...] = ()


def answer_to_score(raw_text: str) -> tuple[int, Answer, bool]:
    """Map a raw backend reply to (score, normalized answer, parsed_ok).

    Case-insensitive after trimming; replies starting with "yes" score 1,
    starting with "no" score 0, anything else scores 0 and is flagged as
    unparsed.  Total: never raises.
    """
    norm = raw_text.strip().lower()
    if norm.startswith("yes"):
        return 1, Answer.YES, True
    if norm.startswith("no"):
        return 0, Answer.NO, True
    return 0, Answer.NO, False


def zero_out_scores(
    order: Sequence[int],
    parents: Mapping[int, Sequence[int]],
    base_scores: Mapping[int, int],
) -> dict[int, int]:
    """Propagate failures down the DAG: any parent at 0 forces the child to 0.

    ``order`` must be topological, which makes the propagation transitive
    and the result independent of everything but the graph and answers.
    """
    scores = dict(base_scores)
    for qid in order:
        if scores[qid]:
            for p in parents[qid]:
                if scores[p] == 0:
                    scores[qid] = 0
                    break
    return scores


def skip_traversal(
    order: Sequence[int],
    parents: Mapping[int, Sequence[int]],
    answer: Callable[[int], int],
) -> tuple[dict[int, int], list[int]]:
    """Walk in topological order, only querying nodes whose parents all scored 1.

    Returns the score map and the list of ids actually asked, in order.
    """
    scores: dict[int, int] = {}
    asked: list[int] = []
    for qid in order:
        ok = True
        for p in parents[qid]:
            if scores[p] != 1:
                ok = False
                break
        if ok:
            asked.append(qid)
            scores[qid] = answer(qid)
        else:
            scores[qid] = 0
    return scores, asked


def evaluate_item(
    g: SceneGraph,
    image_ref: str,
    qa_backend,
    mode: str = SKIP,
    *,
    on_backend_error: str = FAIL_ITEM,
) -> ItemEvaluation:
    """Answer one graph against one image and aggregate the score."""
    if mode not in (ZERO_OUT, SKIP):
        raise ValueError(f"mode must be {ZERO_OUT!r} or {SKIP!r}, got {mode!r}")
    if on_backend_error not in (FAIL_ITEM, ZERO_AND_FLAG):
        raise ValueError(f"on_backend_error must be {FAIL_ITEM!r} or {ZERO_AND_FLAG!r}")

    answerer = getattr(qa_backend, "name", type(qa_backend).__name__)
    order = topological_order(g)
    records: dict[int, AnswerRecord] = {}
    flags: list[Flag] = []

    def ask(qid: int) -> int:
        node = g.get_question(qid)
        try:
            raw = qa_backend.ask(image_ref, node)
        except BackendError as err:
            if on_backend_error == FAIL_ITEM:
                raise
            flags.append(Flag(qid, "backend_error", str(err)))
            records[qid] = AnswerRecord(qid, Answer.NO, "", answerer)
            return 0
        score, norm, parsed = answer_to_score(raw)
        if not parsed:
            flags.append(Flag(qid, "unparsed_answer", raw))
        records[qid] = AnswerRecord(qid, norm, raw, answerer)
        return score

    if mode == ZERO_OUT:
        base = {qid: ask(qid) for qid in order}
        scores = zero_out_scores(order, g.parents, base)
    else:
        scores, _asked = skip_traversal(order, g.parents, ask)
        for qid in order:
            if qid not in records:
                records[qid] = AnswerRecord(qid, Answer.SKIPPED, "", answerer)

    n = len(g.questions)
    average = (sum(scores.values()) / n) if n else None
    answers = tuple(records[qid] for qid in sorted(records))
    return ItemEvaluation(
        prompt_id=g.prompt_id,
        image_ref=image_ref,
        answers=answers,
        scores=scores,
        average_score=average,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class ItemResult:
    """Outcome slot for one (prompt, image) item in a batch."""

    prompt_id: str
    image_ref: str
    evaluation: ItemEvaluation | None = None
    error: str | None = None
    error_kind: str | None = None

    @property
    def ok(self) -> bool:
        return self.evaluation is not None


def evaluate_batch(
    graphs: Iterable[SceneGraph],
    image_map: Mapping[str, Sequence[str]],
    qa_backend,
    mode: str = SKIP,
    parallelism: int = 1,
    *,
    on_backend_error: str = FAIL_ITEM,
) -> list[ItemResult]:
    """Evaluate every (graph, image) pair, isolating per-item failures.

    Results come back in input order regardless of completion order; one
    failing item never aborts the rest.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    items = [(g, ref) for g in graphs for ref in image_map.get(g.prompt_id, ())]

    def run(pair) -> ItemResult:
        g, ref = pair
        try:
            ev = evaluate_item(g, ref, qa_backend, mode, on_backend_error=on_backend_error)
            return ItemResult(g.prompt_id, ref, evaluation=ev)
        except DsgError as err:
            return ItemResult(
                g.prompt_id, ref, error=str(err), error_kind=type(err).__name__
            )

    if parallelism == 1:
        return [run(pair) for pair in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run, items))


# ---------------------------------------------------------------------------
# Persistence


def evaluation_to_dict(ev: ItemEvaluation) -> dict:
    return {
        "prompt_id": ev.prompt_id,
        "image_ref": ev.image_ref,
        "answers": [
            {"id": a.question_id, "answer": a.answer.value, "raw": a.raw_text, "answerer": a.answerer_id}
            for a in ev.answers
        ],
        "scores": {str(qid): score for qid, score in sorted(ev.scores.items())},
        "average": ev.average_score,
        "flags": [
            {"id": f.question_id, "kind": f.kind, "detail": f.detail} for f in ev.flags
        ],
    }


def evaluation_from_dict(d: dict) -> ItemEvaluation:
    return ItemEvaluation(
        prompt_id=d["prompt_id"],
        image_ref=d["image_ref"],
        answers=tuple(
            AnswerRecord(a["id"], Answer(a["answer"]), a["raw"], a["answerer"])
            for a in d["answers"]
        ),
        scores={int(k): v for k, v in d["scores"].items()},
        average_score=d["average"],
        flags=tuple(Flag(f["id"], f["kind"], f.get("detail", "")) for f in d.get("flags", [])),
    )


def write_evaluations_jsonl(evaluations: Iterable[ItemEvaluation], fp: TextIO) -> None:
    for ev in evaluations:
        fp.write(json.dumps(evaluation_to_dict(ev)) + "\n")


def read_evaluations_jsonl(fp: TextIO) -> list[ItemEvaluation]:
    return [evaluation_from_dict(json.loads(line)) for line in fp if line.strip()]
