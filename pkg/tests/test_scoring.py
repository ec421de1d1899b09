import io
import itertools
import random

import pytest

from dsg import scoring
from dsg.backends import StaticQaBackend
from dsg.errors import BackendError
from dsg.graph import topological_order
from dsg.scoring import (
    Answer,
    ZERO_OUT,
    SKIP,
    answer_to_score,
    evaluate_batch,
    evaluate_item,
    skip_traversal,
    zero_out_scores,
)

import oracles
from fixture_gen import random_valid_graph


class FailingBackend:
    name = "failing"

    def __init__(self, fail_ids):
        self.fail_ids = set(fail_ids)
        self.calls = []

    def ask(self, image_ref, question):
        self.calls.append(question.id)
        if question.id in self.fail_ids:
            raise BackendError("boom")
        return "yes"


# ---------------------------------------------------------------------------
# answer_to_score


@pytest.mark.parametrize(
    "raw,score,answer,parsed",
    [
        ("Yes", 1, Answer.YES, True),
        ("  YES.", 1, Answer.YES, True),
        ("yes, it is", 1, Answer.YES, True),
        ("no", 0, Answer.NO, True),
        ("No, there is no motorcycle", 0, Answer.NO, True),
        ("maybe", 0, Answer.NO, False),
        ("", 0, Answer.NO, False),
        ("NOT SURE", 0, Answer.NO, True),  # prefix rule: "no..." counts as no
    ],
)
def test_answer_to_score(raw, score, answer, parsed):
    assert answer_to_score(raw) == (score, answer, parsed)


def test_unparsed_answer_flagged(scoring_fixture):
    backend = StaticQaBackend({1: "yes", 2: "maybe", 3: "yes", 4: "yes"})
    ev = evaluate_item(scoring_fixture, "img", backend, mode=ZERO_OUT)
    assert [f.kind for f in ev.flags] == ["unparsed_answer"]
    assert ev.flags[0].question_id == 2
    assert ev.scores[2] == 0


# ---------------------------------------------------------------------------
# the two scoring fixtures, hand-traced


def test_motorcycle_scoring_zero_out(scoring_fixture):
    backend = StaticQaBackend({1: "no", 2: "yes", 3: "yes", 4: "yes"})
    ev = evaluate_item(scoring_fixture, "img", backend, mode=ZERO_OUT)
    assert ev.scores == {1: 0, 2: 0, 3: 1, 4: 1}
    assert ev.average_score == 0.5
    # every question was asked in zero_out mode
    assert sorted(backend.calls) == [("img", 1), ("img", 2), ("img", 3), ("img", 4)]


def test_motorcycle_scoring_skip(scoring_fixture):
    backend = StaticQaBackend({1: "no", 2: "yes", 3: "yes", 4: "yes"})
    ev = evaluate_item(scoring_fixture, "img", backend, mode=SKIP)
    assert ev.scores == {1: 0, 2: 0, 3: 1, 4: 1}
    assert ev.average_score == 0.5
    # q2's parent failed, so q2 was never transmitted
    assert [qid for _, qid in backend.calls] == [1, 3, 4]
    answers = {a.question_id: a.answer for a in ev.answers}
    assert answers[2] == Answer.SKIPPED


def test_chain_zero_out_is_transitive(chain3):
    backend = StaticQaBackend({1: "no", 2: "yes", 3: "yes"})
    for mode in (ZERO_OUT, SKIP):
        ev = evaluate_item(chain3, "img", backend, mode=mode)
        assert ev.scores == {1: 0, 2: 0, 3: 0}
        assert ev.average_score == 0.0


def test_all_yes_scores_one(motorcycle):
    backend = StaticQaBackend({}, default="yes")
    ev = evaluate_item(motorcycle, "img", backend)
    assert ev.average_score == 1.0


def test_empty_graph_average_undefined():
    from dsg.graph import build_graph

    g = build_graph([], [], [], prompt_id="empty")
    ev = evaluate_item(g, "img", StaticQaBackend({}))
    assert ev.average_score is None
    assert ev.scores == {}


def test_skipped_stays_in_denominator(chain3):
    backend = StaticQaBackend({1: "no"}, default="yes")
    ev = evaluate_item(chain3, "img", backend, mode=SKIP)
    assert ev.average_score == 0.0
    assert len(ev.scores) == 3


# ---------------------------------------------------------------------------
# backend failure policy


def test_backend_error_fails_item_by_default(chain3):
    with pytest.raises(BackendError):
        evaluate_item(chain3, "img", FailingBackend({2}))


def test_backend_error_zero_and_flag(chain3):
    ev = evaluate_item(
        chain3, "img", FailingBackend({2}), mode=ZERO_OUT, on_backend_error="zero"
    )
    assert ev.scores == {1: 1, 2: 0, 3: 0}
    assert [f.kind for f in ev.flags] == ["backend_error"]


# ---------------------------------------------------------------------------
# mode equivalence and suppression


def _simple_graph(n, edges):
    from dsg.graph import (
        Category,
        DependencyEdge,
        QuestionNode,
        SemanticTuple,
        Subcategory,
        build_graph,
    )

    return build_graph(
        [SemanticTuple(i, Category.ENTITY, Subcategory.WHOLE, (f"thing{i}",)) for i in range(1, n + 1)],
        [QuestionNode(i, f"Is thing {i} there?", i) for i in range(1, n + 1)],
        [DependencyEdge(p, c) for p, c in edges],
        prompt_id="exh",
    )


def test_modes_equivalent_full_api_upto_4_nodes():
    for n, edges in oracles.all_dags_upto(4):
        g = _simple_graph(n, edges)
        for bits in range(1 << n):
            replies = {i: ("yes" if bits >> (i - 1) & 1 else "no") for i in range(1, n + 1)}
            ev_zero = evaluate_item(g, "img", StaticQaBackend(replies), mode=ZERO_OUT)
            backend = StaticQaBackend(replies)
            ev_skip = evaluate_item(g, "img", backend, mode=SKIP)
            assert ev_zero.scores == ev_skip.scores
            assert ev_zero.average_score == ev_skip.average_score
            # oracle: definitional ancestor-closure scores
            raw = {i: (1 if bits >> (i - 1) & 1 else 0) for i in range(1, n + 1)}
            assert ev_zero.scores == oracles.expected_scores_bruteforce(n, edges, raw)
            # suppression: no transmitted question had a failed parent
            asked = [qid for _, qid in backend.calls]
            for qid in asked:
                assert all(ev_skip.scores[p] == 1 for p in g.parents[qid])


def test_zero_out_monotone_in_answers():
    rng = random.Random(5)
    for _ in range(50):
        g = random_valid_graph(rng, max_nodes=7)
        n = len(g)
        if n == 0:
            continue
        bits = rng.getrandbits(n)
        replies = {i: ("yes" if bits >> (i - 1) & 1 else "no") for i in range(1, n + 1)}
        base = evaluate_item(g, "img", StaticQaBackend(replies), mode=ZERO_OUT)
        flip = rng.randint(1, n)
        if replies[flip] == "yes":
            continue
        replies[flip] = "yes"
        bumped = evaluate_item(g, "img", StaticQaBackend(replies), mode=ZERO_OUT)
        assert bumped.average_score >= base.average_score


def test_conservation(motorcycle):
    rng = random.Random(11)
    for _ in range(20):
        replies = {i: rng.choice(["yes", "no"]) for i in range(1, 5)}
        ev = evaluate_item(motorcycle, "img", StaticQaBackend(replies))
        assert sum(ev.scores.values()) <= len(motorcycle)
        assert 0.0 <= ev.average_score <= 1.0


# ---------------------------------------------------------------------------
# the lean mode cores used by evaluate_item


def test_mode_cores_shared_by_evaluate_item(chain3):
    order = topological_order(chain3)
    base = {1: 0, 2: 1, 3: 1}
    assert zero_out_scores(order, chain3.parents, base) == {1: 0, 2: 0, 3: 0}
    scores, asked = skip_traversal(order, chain3.parents, lambda qid: base[qid])
    assert scores == {1: 0, 2: 0, 3: 0}
    assert asked == [1]


# ---------------------------------------------------------------------------
# batch


def test_batch_cardinality_and_order(motorcycle, chain3):
    image_map = {
        motorcycle.prompt_id: ["m/a.png", "m/b.png", "m/c.png"],
        chain3.prompt_id: ["c/a.png", "c/b.png", "c/c.png"],
    }
    backend = StaticQaBackend({}, default="yes")
    results = evaluate_batch([motorcycle, chain3], image_map, backend, parallelism=2)
    assert len(results) == 6
    assert [(r.prompt_id, r.image_ref) for r in results] == [
        (motorcycle.prompt_id, "m/a.png"),
        (motorcycle.prompt_id, "m/b.png"),
        (motorcycle.prompt_id, "m/c.png"),
        (chain3.prompt_id, "c/a.png"),
        (chain3.prompt_id, "c/b.png"),
        (chain3.prompt_id, "c/c.png"),
    ]
    assert all(r.ok for r in results)


def test_batch_isolates_failures(motorcycle, chain3):
    class PerImageBackend:
        name = "per-image"

        def ask(self, image_ref, question):
            if image_ref == "bad.png":
                raise BackendError("unreadable image")
            return "yes"

    image_map = {
        motorcycle.prompt_id: ["ok1.png", "bad.png"],
        chain3.prompt_id: ["ok2.png"],
    }
    results = evaluate_batch([motorcycle, chain3], image_map, PerImageBackend())
    assert [r.ok for r in results] == [True, False, True]
    assert results[1].error_kind == "BackendError"


def test_batch_deterministic_across_parallelism(motorcycle, chain3):
    image_map = {motorcycle.prompt_id: ["a", "b"], chain3.prompt_id: ["c"]}
    backend = StaticQaBackend({1: "no"}, default="yes")
    seq = evaluate_batch([motorcycle, chain3], image_map, backend, parallelism=1)
    par = evaluate_batch([motorcycle, chain3], image_map, backend, parallelism=4)
    out_seq = io.StringIO()
    out_par = io.StringIO()
    scoring.write_evaluations_jsonl([r.evaluation for r in seq], out_seq)
    scoring.write_evaluations_jsonl([r.evaluation for r in par], out_par)
    assert out_seq.getvalue() == out_par.getvalue()


def test_evaluation_jsonl_round_trip(scoring_fixture):
    backend = StaticQaBackend({1: "no", 2: "yes", 3: "yes", 4: "maybe"})
    ev = evaluate_item(scoring_fixture, "m/x.png", backend, mode=ZERO_OUT)
    buf = io.StringIO()
    scoring.write_evaluations_jsonl([ev], buf)
    row = buf.getvalue()
    assert '"prompt_id"' in row and '"answers"' in row and '"scores"' in row and '"average"' in row
    buf.seek(0)
    assert scoring.read_evaluations_jsonl(buf) == [ev]
