"""Built-in end-to-end smoke check running entirely on in-process mocks.

Used by ``dsg selftest`` and handy after install: it exercises graph
construction, the codec round-trip, both scoring modes, the correlation
statistics, and the full generate -> score pipeline with a scripted LLM
and a scene oracle.
"""

from __future__ import annotations

from . import codec, scoring
from .backends import SceneOracle, ScriptedGenerationBackend, StaticQaBackend
from .graph import (
    Category,
    DependencyEdge,
    QuestionNode,
    SemanticTuple,
    Subcategory,
    build_graph,
    topological_order,
)
from .metrics import rank_correlations
from .pipeline import PreambleSet, generate_dsg

MOTORCYCLE_PROMPT = "a blue motorcycle parked by paint chipped doors."


def motorcycle_graph():
    """The 4-node fixture: motorcycle, blue, doors, parked-by."""
    tuples = [
        SemanticTuple(1, Category.ENTITY, Subcategory.WHOLE, ("motorcycle",)),
        SemanticTuple(2, Category.ATTRIBUTE, Subcategory.COLOR, ("blue", "motorcycle")),
        SemanticTuple(3, Category.ENTITY, Subcategory.WHOLE, ("doors",)),
        SemanticTuple(4, Category.RELATION, Subcategory.SPATIAL, ("parked by", "motorcycle", "doors")),
    ]
    questions = [
        QuestionNode(1, "Is there a motorcycle?", 1),
        QuestionNode(2, "Is the motorcycle blue?", 2),
        QuestionNode(3, "Are there doors?", 3),
        QuestionNode(4, "Is the motorcycle parked by the doors?", 4),
    ]
    edges = [DependencyEdge(1, 2), DependencyEdge(1, 4), DependencyEdge(3, 4)]
    return build_graph(tuples, questions, edges, prompt_id="motorcycle")


def scoring_fixture_graph():
    """Two independent chains: motorcycle->blue, doors->paint-chipped."""
    tuples = [
        SemanticTuple(1, Category.ENTITY, Subcategory.WHOLE, ("motorcycle",)),
        SemanticTuple(2, Category.ATTRIBUTE, Subcategory.COLOR, ("blue", "motorcycle")),
        SemanticTuple(3, Category.ENTITY, Subcategory.WHOLE, ("doors",)),
        SemanticTuple(4, Category.ATTRIBUTE, Subcategory.STATE, ("paint chipped", "doors")),
    ]
    questions = [
        QuestionNode(1, "Is there a motorcycle?", 1),
        QuestionNode(2, "Is the motorcycle blue?", 2),
        QuestionNode(3, "Are there doors?", 3),
        QuestionNode(4, "Is the paint on the doors chipped?", 4),
    ]
    edges = [DependencyEdge(1, 2), DependencyEdge(3, 4)]
    return build_graph(tuples, questions, edges, prompt_id="motorcycle-scoring")


def _check(name: str, ok: bool, detail: str = "") -> bool:
    print(f"selftest: {name}: {'ok' if ok else 'FAIL ' + detail}")
    return ok


def run_selftest() -> int:
    ok = True

    g = motorcycle_graph()
    ok &= _check("graph roots", g.roots == (1, 3))
    ok &= _check("topological order", topological_order(g) == [1, 2, 3, 4])

    t_text, q_text, d_text = codec.encode_graph(g)
    ok &= _check(
        "codec round-trip",
        codec.parse_graph("motorcycle", t_text, q_text, d_text) == g,
    )

    fixture = scoring_fixture_graph()
    backend = StaticQaBackend({1: "no", 2: "yes", 3: "yes", 4: "yes"})
    ev = scoring.evaluate_item(fixture, "img", backend, mode=scoring.ZERO_OUT)
    ok &= _check(
        "zero-out scoring",
        ev.scores == {1: 0, 2: 0, 3: 1, 4: 1} and ev.average_score == 0.5,
        f"got {ev.scores} avg {ev.average_score}",
    )
    ev_skip = scoring.evaluate_item(fixture, "img", StaticQaBackend({1: "no", 2: "yes", 3: "yes", 4: "yes"}), mode=scoring.SKIP)
    ok &= _check("skip scoring equals zero-out", ev_skip.scores == ev.scores)

    corr = rank_correlations([1, 2, 3, 4], [1, 3, 2, 4])
    ok &= _check(
        "rank correlations",
        corr.spearman_rho == 0.8 and abs(corr.kendall_tau - 2 / 3) < 1e-12,
        f"got rho={corr.spearman_rho} tau={corr.kendall_tau}",
    )

    # scripted three-stage generation, then oracle answering
    preambles = PreambleSet.default()
    scripts = {
        "tuples": {MOTORCYCLE_PROMPT: t_text},
        "questions": {MOTORCYCLE_PROMPT: q_text},
        "dependencies": {MOTORCYCLE_PROMPT: d_text},
    }
    llm = ScriptedGenerationBackend(scripts, preambles)
    graph, trace = generate_dsg(MOTORCYCLE_PROMPT, llm, preambles)
    ok &= _check("scripted generation", graph.questions == g.questions and graph.edges == g.edges)
    ok &= _check("generation trace", set(trace.stages) == {"tuples", "questions", "dependencies"})

    image = "mock/motorcycle.png"
    oracle = SceneOracle({image: graph.tuples}, {image: graph})
    ev_full = scoring.evaluate_item(graph, image, oracle)
    ok &= _check("oracle full scene", ev_full.average_score == 1.0)

    broken = SceneOracle({image: graph.tuples[1:]}, {image: graph})  # drop the motorcycle
    ev_broken = scoring.evaluate_item(graph, image, broken)
    ok &= _check(
        "oracle missing root zeroes subtree",
        ev_broken.scores == {1: 0, 2: 0, 3: 1, 4: 0} and ev_broken.average_score == 0.25,
        f"got {ev_broken.scores}",
    )
    asked = [qid for _, qid in broken.calls]
    ok &= _check("skipped questions never transmitted", asked == [1, 3])

    print("PASS" if ok else "FAIL")
    return 0 if ok else 1
