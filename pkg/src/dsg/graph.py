"""Typed semantic tuples, yes/no question nodes, and their dependency DAG.

A prompt decomposes into atomic propositions, each carried by a
:class:`SemanticTuple` and asked as a :class:`QuestionNode`.  Directed
edges mean "the child question is only meaningful if the parent's answer
is yes".  :func:`build_graph` validates everything and normalizes ids to
a dense 1..n range so downstream scoring can index arrays directly.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .errors import (
    ArityError,
    CycleError,
    DanglingRefError,
    DuplicateIdError,
    UnknownIdError,
)


class Category(str, Enum):
    ENTITY = "entity"
    ATTRIBUTE = "attribute"
    RELATION = "relation"
    GLOBAL = "global"


class Subcategory(str, Enum):
    WHOLE = "whole"
    PART = "part"
    COLOR = "color"
    TYPE = "type"
    MATERIAL = "material"
    COUNT = "count"
    TEXTURE = "texture"
    TEXT_RENDERING = "text_rendering"
    SHAPE = "shape"
    SIZE = "size"
    STYLE = "style"
    STATE = "state"
    SPATIAL = "spatial"
    ACTION = "action"
    GLOBAL = "global"


SUBCATEGORIES: Mapping[Category, frozenset[Subcategory]] = {
    Category.ENTITY: frozenset({Subcategory.WHOLE, Subcategory.PART}),
    Category.ATTRIBUTE: frozenset(
        {
            Subcategory.COLOR,
            Subcategory.TYPE,
            Subcategory.MATERIAL,
            Subcategory.COUNT,
            Subcategory.TEXTURE,
            Subcategory.TEXT_RENDERING,
            Subcategory.SHAPE,
            Subcategory.SIZE,
            Subcategory.STYLE,
            Subcategory.STATE,
        }
    ),
    Category.RELATION: frozenset({Subcategory.SPATIAL, Subcategory.ACTION}),
    Category.GLOBAL: frozenset({Subcategory.GLOBAL}),
}

# entities and globals name one thing; attributes bind a value to an entity;
# relations bind a relation word to subject and object
ARITY: Mapping[Category, int] = {
    Category.ENTITY: 1,
    Category.ATTRIBUTE: 2,
    Category.RELATION: 3,
    Category.GLOBAL: 1,
}

EXPECTED_ANSWER = "yes"


@dataclass(frozen=True, slots=True)
class SemanticTuple:
    """One atomic proposition: a typed 1/2/3-tuple with an id."""

    id: int
    category: Category
    subcategory: Subcategory
    args: tuple[str, ...]

    def __post_init__(self):
        if not isinstance(self.id, int) or self.id < 1:
            raise ValueError(f"tuple id must be a positive integer, got {self.id!r}")
        object.__setattr__(self, "args", tuple(self.args))
        if self.subcategory not in SUBCATEGORIES[self.category]:
            raise ArityError(
                f"subcategory {self.subcategory.value!r} is not valid for "
                f"category {self.category.value!r}"
            )
        want = ARITY[self.category]
        if len(self.args) != want:
            raise ArityError(
                f"{self.category.value} tuple takes {want} arg(s), got {len(self.args)}"
            )
        if any(not a or not a.strip() for a in self.args):
            raise ArityError("tuple args must be non-empty strings")


@dataclass(frozen=True, slots=True)
class QuestionNode:
    """A yes/no question derived from exactly one tuple.

    The expected answer is always yes: questions are phrased so that the
    prompt asserts them true.
    """

    id: int
    text: str
    tuple_id: int
    expected_answer: str = EXPECTED_ANSWER

    def __post_init__(self):
        if not isinstance(self.id, int) or self.id < 1:
            raise ValueError(f"question id must be a positive integer, got {self.id!r}")
        if not self.text or not self.text.strip():
            raise ValueError("question text must be non-empty")
        if self.expected_answer != EXPECTED_ANSWER:
            raise ValueError("expected_answer is fixed to 'yes'")


@dataclass(frozen=True, slots=True)
class DependencyEdge:
    """parent must be answered yes before child is worth asking."""

    parent_id: int
    child_id: int


@dataclass(frozen=True)
class SceneGraph:
    """Immutable DAG of questions for one prompt.

    After :func:`build_graph`, ids form the dense range 1..n, ``tuples``
    and ``questions`` are sorted by id, and ``source_ids`` maps each
    normalized id back to the id the annotation used.
    """

    prompt_id: str
    tuples: tuple[SemanticTuple, ...]
    questions: tuple[QuestionNode, ...]
    edges: tuple[DependencyEdge, ...]
    source_ids: dict[int, int] = field(compare=False, repr=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.questions)

    @property
    def question_ids(self) -> range:
        return range(1, len(self.questions) + 1)

    def get_tuple(self, tuple_id: int) -> SemanticTuple:
        if not 1 <= tuple_id <= len(self.tuples):
            raise UnknownIdError(f"no tuple with id {tuple_id}")
        return self.tuples[tuple_id - 1]

    def get_question(self, question_id: int) -> QuestionNode:
        if not 1 <= question_id <= len(self.questions):
            raise UnknownIdError(f"no question with id {question_id}")
        return self.questions[question_id - 1]

    @cached_property
    def parents(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {i: [] for i in self.question_ids}
        for e in self.edges:
            out[e.child_id].append(e.parent_id)
        return {i: tuple(sorted(ps)) for i, ps in out.items()}

    @cached_property
    def children(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {i: [] for i in self.question_ids}
        for e in self.edges:
            out[e.parent_id].append(e.child_id)
        return {i: tuple(sorted(cs)) for i, cs in out.items()}

    @property
    def roots(self) -> tuple[int, ...]:
        return tuple(i for i in self.question_ids if not self.parents[i])

    @cached_property
    def _topo_order(self) -> tuple[int, ...]:
        indegree = {i: len(self.parents[i]) for i in self.question_ids}
        ready = [i for i in self.question_ids if indegree[i] == 0]
        heapq.heapify(ready)
        order: list[int] = []
        while ready:
            node = heapq.heappop(ready)
            order.append(node)
            for child in self.children[node]:
                indegree[child] -= 1
                if indegree[child] == 0:
                    heapq.heappush(ready, child)
        return tuple(order)


def topological_order(g: SceneGraph) -> list[int]:
    """Order every question id so parents precede children.

    Ties break by ascending id, so the order (and everything downstream
    of it) is reproducible bit-for-bit.
    """
    return list(g._topo_order)


def descendants(g: SceneGraph, question_id: int) -> set[int]:
    """All ids reachable from ``question_id`` via one or more edges."""
    g.get_question(question_id)  # raises UnknownIdError for absent ids
    seen: set[int] = set()
    stack = list(g.children[question_id])
    while stack:
        node = stack.pop()
        if node not in seen:
            seen.add(node)
            stack.extend(g.children[node])
    return seen


def _find_cycle(nodes: Sequence[int], children: Mapping[int, list[int]]) -> list[int]:
    # iterative DFS, color marking; returns one directed cycle
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    parent: dict[int, int] = {}
    for start in nodes:
        if color[start] != WHITE:
            continue
        stack: list[tuple[int, int]] = [(start, 0)]
        color[start] = GRAY
        while stack:
            node, idx = stack[-1]
            kids = children.get(node, [])
            if idx < len(kids):
                stack[-1] = (node, idx + 1)
                kid = kids[idx]
                if color[kid] == GRAY:
                    cycle = [kid]
                    cur = node
                    while cur != kid:
                        cycle.append(cur)
                        cur = parent[cur]
                    cycle.reverse()
                    return cycle
                if color[kid] == WHITE:
                    color[kid] = GRAY
                    parent[kid] = node
                    stack.append((kid, 0))
            else:
                color[node] = BLACK
                stack.pop()
    return []


def build_graph(
    tuples: Iterable[SemanticTuple],
    questions: Iterable[QuestionNode],
    edges: Iterable[DependencyEdge],
    prompt_id: str = "",
) -> SceneGraph:
    """Validate and assemble a :class:`SceneGraph`.

    Ids from the annotation may be any positive integers; they are
    remapped to 1..n preserving their relative order, with the original
    ids kept in ``source_ids``.

    Raises:
        DuplicateIdError: a tuple or question id occurs twice.
        DanglingRefError: a question or edge references an absent id, or
            a tuple has no question.
        ArityError: tuple arity/subcategory mismatch (raised when the
            tuples themselves were constructed).
        CycleError: the edges contain a directed cycle (reported with the
            original ids).
    """
    tuples = list(tuples)
    questions = list(questions)
    edge_list = list(edges)

    tuple_ids = [t.id for t in tuples]
    if len(set(tuple_ids)) != len(tuple_ids):
        dup = sorted({i for i in tuple_ids if tuple_ids.count(i) > 1})
        raise DuplicateIdError(f"duplicate tuple id(s): {dup}")
    question_ids = [q.id for q in questions]
    if len(set(question_ids)) != len(question_ids):
        dup = sorted({i for i in question_ids if question_ids.count(i) > 1})
        raise DuplicateIdError(f"duplicate question id(s): {dup}")

    id_set = set(tuple_ids)
    for q in questions:
        if q.tuple_id not in id_set:
            raise DanglingRefError(f"question {q.id} references absent tuple {q.tuple_id}")
        if q.tuple_id != q.id:
            raise DanglingRefError(
                f"question {q.id} must carry its own tuple's id, got {q.tuple_id}"
            )
    missing = id_set - set(question_ids)
    if missing:
        raise DanglingRefError(f"tuple(s) {sorted(missing)} have no question")
    extra = set(question_ids) - id_set
    if extra:
        raise DanglingRefError(f"question(s) {sorted(extra)} have no tuple")

    for e in edge_list:
        for ref in (e.parent_id, e.child_id):
            if ref not in id_set:
                raise DanglingRefError(f"edge ({e.parent_id}->{e.child_id}) references absent id {ref}")
        if e.parent_id == e.child_id:
            raise CycleError([e.parent_id])

    children: dict[int, list[int]] = {i: [] for i in id_set}
    seen_pairs: set[tuple[int, int]] = set()
    for e in edge_list:
        pair = (e.parent_id, e.child_id)
        if pair not in seen_pairs:
            seen_pairs.add(pair)
            children[e.parent_id].append(e.child_id)
    cycle = _find_cycle(sorted(id_set), children)
    if cycle:
        raise CycleError(cycle)

    # dense renumbering: ascending original id -> 1..n
    remap = {orig: i for i, orig in enumerate(sorted(id_set), start=1)}
    norm_tuples = tuple(
        SemanticTuple(remap[t.id], t.category, t.subcategory, t.args)
        for t in sorted(tuples, key=lambda t: t.id)
    )
    norm_questions = tuple(
        QuestionNode(remap[q.id], q.text, remap[q.tuple_id])
        for q in sorted(questions, key=lambda q: q.id)
    )
    norm_edges = tuple(
        DependencyEdge(p, c)
        for p, c in sorted((remap[a], remap[b]) for a, b in seen_pairs)
    )
    source_ids = {new: old for old, new in remap.items()}
    return SceneGraph(
        prompt_id=prompt_id,
        tuples=norm_tuples,
        questions=norm_questions,
        edges=norm_edges,
        source_ids=source_ids,
    )
