"""Question-set quality metrics, judges, and rank correlations.

Quality of a generated question set is measured against ground-truth
tuples: precision (questions matching some tuple / all questions),
recall (tuples covered by some question / all tuples), uniqueness
(non-duplicated questions / all questions), plus the edge-level
dependency validity check.  Atomicity is ingested from human labels
only — it is not judged automatically.

Rank correlations are Spearman's rho (Pearson over average-assigned
ranks) and the tie-aware Kendall tau-b:

    tau_b = (C - D) / sqrt((C + D + Tx) * (C + D + Ty))

with C/D the concordant/discordant pair counts and Tx/Ty the pairs tied
only in one list.
"""

from __future__ import annotations

import math
import re
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .dataset import HumanAnswer, HumanQuestionAnswer, PromptRecord
from .errors import (
    DegenerateInputError,
    JudgeParseError,
    KeyMismatchError,
    UnknownIdError,
)
from .graph import QuestionNode, SceneGraph, SemanticTuple
from .scoring import Answer, ItemEvaluation

# ---------------------------------------------------------------------------
# Token normalization shared by the dependency check and the lexical judge


@lru_cache(maxsize=1)
def stop_words() -> frozenset[str]:
    text = resources.files("dsg").joinpath("data/stopwords.txt").read_text("utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _stem(token: str) -> str:
    """Small deterministic suffix stripper (applied to both sides alike)."""
    if len(token) > 4 and token.endswith("sses"):
        return token[:-2]
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "i"
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        token = token[:-1]
    if len(token) > 5 and token.endswith("ing"):
        token = token[:-3]
    elif len(token) > 4 and token.endswith("ed"):
        token = token[:-2]
    return token


def content_tokens(text: str) -> frozenset[str]:
    """Lowercased, stop-word-filtered, stemmed content tokens of a string."""
    stops = stop_words()
    return frozenset(
        _stem(tok) for tok in _TOKEN_RE.findall(text.lower()) if tok not in stops
    )


def tuple_tokens(t: SemanticTuple) -> frozenset[str]:
    return content_tokens(" ".join(t.args))


# ---------------------------------------------------------------------------
# Dependency validity


@dataclass(frozen=True)
class DependencyValidity:
    edges: tuple[tuple[int, int, bool], ...]  # (parent, child, valid)
    ratio: float


def check_dependency_validity(g: SceneGraph) -> DependencyValidity:
    """Edge is valid when parent and child questions share a content token.

    Mirrors the automatic check of whether what the parent asks about is
    mentioned again in the child.  Edgeless graphs score 1.0.
    """
    judged = []
    valid = 0
    for e in g.edges:
        parent_toks = content_tokens(g.get_question(e.parent_id).text)
        child_toks = content_tokens(g.get_question(e.child_id).text)
        ok = bool(parent_toks & child_toks)
        valid += ok
        judged.append((e.parent_id, e.child_id, ok))
    ratio = valid / len(judged) if judged else 1.0
    return DependencyValidity(edges=tuple(judged), ratio=ratio)


# ---------------------------------------------------------------------------
# Match / duplicate judging


class Judge(str, Enum):
    LLM = "llm_backend"
    LEXICAL = "lexical_baseline"
    HUMAN = "human"


@dataclass(frozen=True, slots=True)
class MatchJudgment:
    tuple_id: int
    question_id: int
    matched: bool
    judge: Judge


LEXICAL_OVERLAP_THRESHOLD = 0.5


def lexical_match(t: SemanticTuple, question, threshold: float = LEXICAL_OVERLAP_THRESHOLD) -> bool:
    """Token-overlap match: shared tokens >= threshold of the smaller set."""
    q_text = question.text if isinstance(question, QuestionNode) else str(question)
    a = tuple_tokens(t)
    b = content_tokens(q_text)
    if not a or not b:
        return False
    return len(a & b) / min(len(a), len(b)) >= threshold


def judge_matches(
    g: SceneGraph,
    human_tuples: Sequence[SemanticTuple] | None = None,
    judge_backend=None,
) -> list[MatchJudgment]:
    """Judge which questions match which tuples.

    With no backend the deterministic lexical baseline runs; with a
    generation backend, the match preamble is sent and its completion
    parsed (lines ``question_id | tuple_id,...`` with 0 for no match).
    """
    tuples = list(human_tuples) if human_tuples is not None else list(g.tuples)
    if judge_backend is None:
        return [
            MatchJudgment(t.id, q.id, lexical_match(t, q), Judge.LEXICAL)
            for t in tuples
            for q in g.questions
        ]
    preamble = _judge_preamble("judge_match.txt")
    completion = judge_backend.complete(preamble, _judge_input(tuples, g.questions))
    pairs = _parse_match_completion(completion)
    tuple_ids = {t.id for t in tuples}
    question_ids = set(g.question_ids)
    judgments = []
    for qid, tids in pairs.items():
        if qid not in question_ids:
            raise JudgeParseError(f"judge referenced unknown question id {qid}")
        for tid in tids:
            if tid not in tuple_ids:
                raise JudgeParseError(f"judge referenced unknown tuple id {tid}")
            judgments.append(MatchJudgment(tid, qid, True, Judge.LLM))
    return judgments


def _judge_preamble(filename: str) -> str:
    return resources.files("dsg").joinpath(f"data/preambles/{filename}").read_text("utf-8")


def _judge_input(tuples: Sequence[SemanticTuple], questions: Sequence[QuestionNode]) -> str:
    from .codec import encode_tuple  # local import to avoid a cycle

    tuple_lines = "\n".join(encode_tuple(t) for t in tuples)
    question_lines = "\n".join(f"{q.id} | {q.text}" for q in questions)
    return f"tuples:\n{tuple_lines}\n\nquestions:\n{question_lines}"


def _parse_match_completion(text: str) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        if "|" not in raw:
            raise JudgeParseError(f"line {line_no}: missing '|' in match judgment")
        left, right = raw.split("|", 1)
        left = left.strip()
        if not left.isdigit():
            raise JudgeParseError(f"line {line_no}: bad question id {left!r}")
        qid = int(left)
        tids = []
        right = right.strip()
        if right:
            for tok in right.split(","):
                tok = tok.strip()
                if not tok.isdigit():
                    raise JudgeParseError(f"line {line_no}: bad tuple id {tok!r}")
                tid = int(tok)
                if tid != 0:
                    tids.append(tid)
        out.setdefault(qid, []).extend(tids)
    return out


_DUP_GROUP_RE = re.compile(r"\(([^)]*)\)")
_DUP_ID_RE = re.compile(r"q?(\d+)")


def parse_duplicates_completion(text: str) -> list[frozenset[int]]:
    """Parse "duplicates: (q1,q4), (q2,q3)" / "duplicates: q1,q4" / "... none"."""
    lowered = text.lower()
    idx = lowered.rfind("duplicates:")
    if idx < 0:
        raise JudgeParseError("no 'duplicates:' marker in judge completion")
    rest = text[idx + len("duplicates:"):].strip().splitlines()
    rest = rest[0].strip() if rest else ""
    if not rest or rest.lower() in ("none", "none."):
        return []
    groups = _DUP_GROUP_RE.findall(rest)
    if not groups:
        groups = [rest]
    sets = []
    for blob in groups:
        ids = frozenset(int(m) for m in _DUP_ID_RE.findall(blob))
        if len(ids) >= 2:
            sets.append(ids)
        elif not ids:
            raise JudgeParseError(f"unreadable duplicate group {blob!r}")
    return sets


def judge_duplicates(g: SceneGraph, judge_backend=None) -> list[frozenset[int]]:
    """Find sets of duplicated questions (lexical baseline or LLM judge)."""
    if judge_backend is None:
        sets = _merge_sets(
            frozenset((a.id, b.id))
            for i, a in enumerate(g.questions)
            for b in g.questions[i + 1:]
            if _question_overlap(a, b) >= LEXICAL_OVERLAP_THRESHOLD
        )
        return sets
    preamble = _judge_preamble("judge_duplicates.txt")
    question_lines = "\n".join(f"{q.id} | {q.text}" for q in g.questions)
    completion = judge_backend.complete(preamble, question_lines)
    sets = parse_duplicates_completion(completion)
    known = set(g.question_ids)
    for s in sets:
        unknown = s - known
        if unknown:
            raise JudgeParseError(f"judge referenced unknown question id(s) {sorted(unknown)}")
    return sets


def _question_overlap(a: QuestionNode, b: QuestionNode) -> float:
    ta, tb = content_tokens(a.text), content_tokens(b.text)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / min(len(ta), len(tb))


def _merge_sets(sets: Iterable[frozenset[int]]) -> list[frozenset[int]]:
    # union-find so overlapping duplicate sets collapse into one group
    parent: dict[int, int] = {}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for group in sets:
        members = sorted(group)
        for x in members:
            parent.setdefault(x, x)
        for a, b in zip(members, members[1:]):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, set[int]] = {}
    for x in parent:
        groups.setdefault(find(x), set()).add(x)
    return [frozenset(v) for _, v in sorted(groups.items()) if len(v) >= 2]


# ---------------------------------------------------------------------------
# Question-set quality


@dataclass(frozen=True)
class QgQualityResult:
    precision: float | None
    recall: float | None
    uniqueness: float | None
    duplicate_sets: tuple[frozenset[int], ...]
    dependency_valid_ratio: float
    atomicity: float | None = None


def qg_quality(
    g: SceneGraph,
    human_tuples: Sequence[SemanticTuple] | None = None,
    matches: Iterable[MatchJudgment] = (),
    duplicates: Iterable[frozenset[int]] = (),
    atomicity_labels: Mapping[int, bool] | None = None,
) -> QgQualityResult:
    """Aggregate match judgments and duplicate sets into quality ratios.

    A question counts matched when it matches at least one tuple; a tuple
    counts covered when at least one question matches it.  Recall needs
    the ground-truth tuples and is omitted without them.  Uniqueness
    keeps one representative per duplicate set.
    """
    matches = list(matches)
    duplicate_sets = _merge_sets(frozenset(s) for s in duplicates)
    tuples = list(human_tuples) if human_tuples is not None else list(g.tuples)
    tuple_ids = {t.id for t in tuples}
    question_ids = set(g.question_ids)

    seen: set[tuple[int, int, Judge]] = set()
    for m in matches:
        if m.question_id not in question_ids:
            raise UnknownIdError(f"match judgment references unknown question {m.question_id}")
        if m.tuple_id not in tuple_ids:
            raise UnknownIdError(f"match judgment references unknown tuple {m.tuple_id}")
        key = (m.tuple_id, m.question_id, m.judge)
        if key in seen:
            raise ValueError(f"duplicate judgment for tuple {m.tuple_id}, question {m.question_id}")
        seen.add(key)
    for s in duplicate_sets:
        unknown = s - question_ids
        if unknown:
            raise UnknownIdError(f"duplicate set references unknown question(s) {sorted(unknown)}")
    if atomicity_labels:
        unknown = set(atomicity_labels) - question_ids
        if unknown:
            raise UnknownIdError(f"atomicity labels reference unknown question(s) {sorted(unknown)}")

    matched_questions = {m.question_id for m in matches if m.matched}
    covered_tuples = {m.tuple_id for m in matches if m.matched}

    n_q = len(g.questions)
    precision = len(matched_questions) / n_q if n_q else None
    recall = (len(covered_tuples) / len(tuples) if tuples else None) if human_tuples is not None else None
    non_unique = sum(len(s) - 1 for s in duplicate_sets)
    uniqueness = (n_q - non_unique) / n_q if n_q else None
    atomicity = None
    if atomicity_labels:
        atomicity = sum(bool(v) for v in atomicity_labels.values()) / len(atomicity_labels)

    return QgQualityResult(
        precision=precision,
        recall=recall,
        uniqueness=uniqueness,
        duplicate_sets=tuple(sorted(duplicate_sets, key=sorted)),
        dependency_valid_ratio=check_dependency_validity(g).ratio,
        atomicity=atomicity,
    )


# ---------------------------------------------------------------------------
# Rank correlations


@dataclass(frozen=True)
class TieCounts:
    """Numbers of tied pairs: in x (incl. both), in y (incl. both), in both."""

    x: int
    y: int
    both: int


@dataclass(frozen=True)
class CorrelationResult:
    spearman_rho: float
    kendall_tau: float
    n: int
    tie_counts: TieCounts


def _average_ranks(values: Sequence[float]) -> list[float]:
    ordered = sorted(values)
    # average rank of v = midpoint of its 1-based index range among equals
    return [
        (bisect_left(ordered, v) + 1 + bisect_right(ordered, v)) / 2 for v in values
    ]


def _pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    return sxy / math.sqrt(sxx * syy)


def _tie_pairs(values: Sequence[float]) -> int:
    counts: dict[float, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return sum(c * (c - 1) // 2 for c in counts.values())


def _count_swaps(ys: list[float]) -> int:
    # merge-sort inversion counting
    if len(ys) < 2:
        return 0
    mid = len(ys) // 2
    left, right = ys[:mid], ys[mid:]
    swaps = _count_swaps(left) + _count_swaps(right)
    merged = []
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            swaps += len(left) - i
            merged.append(right[j])
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    ys[:] = merged
    return swaps


def rank_correlations(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Compute Spearman's rho and Kendall's tau-b for one pair of lists.

    Raises DegenerateInputError when fewer than two points or either list
    is constant (both statistics are undefined there).
    """
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise DegenerateInputError(f"need at least 2 points, got {n}")
    if len(set(x)) == 1 or len(set(y)) == 1:
        raise DegenerateInputError("correlation undefined for a constant list")

    rho = _pearson(_average_ranks(x), _average_ranks(y))

    # tau-b via tie-group counts and inversion counting:
    # sort by (x, y); within an x-tie block the y values are ascending and
    # contribute no swaps, so swaps = discordant pair count D.
    pairs = sorted(zip(x, y))
    ys = [b for _, b in pairs]
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(x)
    n2 = _tie_pairs(y)
    n3 = _tie_pairs(pairs)  # tied in both
    d = _count_swaps(ys)
    cd_pairs = n0 - n1 - n2 + n3  # pairs tied in neither list
    c = cd_pairs - d
    tau = (c - d) / math.sqrt((n0 - n1) * (n0 - n2))

    return CorrelationResult(
        spearman_rho=rho,
        kendall_tau=tau,
        n=n,
        tie_counts=TieCounts(x=n1, y=n2, both=n3),
    )


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    return rank_correlations(x, y)


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    return rank_correlations(x, y)


# ---------------------------------------------------------------------------
# VQA vs human per-question agreement


QaKey = tuple[str, str, int]  # (prompt_id, image_ref, question_id)


@dataclass(frozen=True)
class GroupStat:
    matched: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.matched / self.total


@dataclass(frozen=True)
class MatchAccuracy:
    overall: GroupStat
    by_category: dict[str, GroupStat]
    by_subcategory: dict[str, GroupStat]
    by_source: dict[str, GroupStat] | None


def aggregate_human_answers(
    human_answers: Iterable[HumanQuestionAnswer],
) -> dict[QaKey, Answer]:
    """Majority vote per question; INVALID votes abstain; ties fall to no."""
    votes: dict[QaKey, list[HumanAnswer]] = {}
    for rec in human_answers:
        key = (rec.prompt_id, rec.image_ref, rec.question_id)
        votes.setdefault(key, []).append(rec.answer)
    out = {}
    for key, vs in votes.items():
        yes = sum(v == HumanAnswer.YES for v in vs)
        no = sum(v == HumanAnswer.NO for v in vs)
        out[key] = Answer.YES if yes > no else Answer.NO
    return out


def _model_answer(a: Answer) -> Answer:
    # a skipped question scored 0, equivalent to answering no
    return Answer.NO if a == Answer.SKIPPED else a


def vqa_human_match_accuracy(
    evaluations: Iterable[ItemEvaluation],
    human_answers: Iterable[HumanQuestionAnswer],
    graphs: Mapping[str, SceneGraph],
    prompts: Mapping[str, PromptRecord] | None = None,
) -> MatchAccuracy:
    """Proportion of questions where model and human answers agree.

    Both sides must cover exactly the same (prompt, image, question)
    keys.  Grouped accuracies key on the question's tuple category and
    subcategory, and on the prompt source when prompt records are given.
    """
    model: dict[QaKey, Answer] = {}
    for ev in evaluations:
        for a in ev.answers:
            model[(ev.prompt_id, ev.image_ref, a.question_id)] = _model_answer(a.answer)
    human = aggregate_human_answers(human_answers)

    missing_human = sorted(set(model) - set(human))
    missing_model = sorted(set(human) - set(model))
    if missing_human or missing_model:
        raise KeyMismatchError(
            f"{len(missing_model)} key(s) missing from model answers, "
            f"{len(missing_human)} missing from human answers",
            missing_left=missing_model,
            missing_right=missing_human,
        )
    if not model:
        raise KeyMismatchError("no shared (prompt, image, question) keys")

    counts: dict[tuple[str, str], list[int]] = {}

    def bump(table: str, group: str, hit: bool) -> None:
        slot = counts.setdefault((table, group), [0, 0])
        slot[0] += hit
        slot[1] += 1

    for key, model_ans in sorted(model.items()):
        prompt_id, _, qid = key
        try:
            g = graphs[prompt_id]
        except KeyError:
            raise KeyMismatchError(f"no graph loaded for prompt {prompt_id!r}") from None
        t = g.get_tuple(g.get_question(qid).tuple_id)
        hit = model_ans == human[key]
        bump("overall", "overall", hit)
        bump("category", t.category.value, hit)
        bump("subcategory", f"{t.category.value}/{t.subcategory.value}", hit)
        if prompts is not None:
            rec = prompts.get(prompt_id)
            if rec is None:
                raise KeyMismatchError(f"no prompt record for {prompt_id!r}")
            bump("source", rec.source, hit)

    def table(name: str) -> dict[str, GroupStat]:
        return {
            group: GroupStat(matched, total)
            for (t_name, group), (matched, total) in sorted(counts.items())
            if t_name == name
        }

    matched, total = counts[("overall", "overall")]
    return MatchAccuracy(
        overall=GroupStat(matched, total),
        by_category=table("category"),
        by_subcategory=table("subcategory"),
        by_source=table("source") if prompts is not None else None,
    )
