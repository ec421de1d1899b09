import pytest

from dsg.graph import (
    Category,
    DependencyEdge,
    QuestionNode,
    SemanticTuple,
    Subcategory,
    build_graph,
)
from dsg.selftest import motorcycle_graph, scoring_fixture_graph


@pytest.fixture
def motorcycle():
    """4 nodes, edges 1->2, 1->4, 3->4 (relation depends on both entities)."""
    return motorcycle_graph()


@pytest.fixture
def scoring_fixture():
    """4 nodes, edges 1->2, 3->4 (two independent attribute chains)."""
    return scoring_fixture_graph()


@pytest.fixture
def chain3():
    """1 -> 2 -> 3."""
    tuples = [
        SemanticTuple(1, Category.ENTITY, Subcategory.WHOLE, ("cat",)),
        SemanticTuple(2, Category.ENTITY, Subcategory.PART, ("tail of the cat",)),
        SemanticTuple(3, Category.ATTRIBUTE, Subcategory.COLOR, ("black", "tail")),
    ]
    questions = [
        QuestionNode(1, "Is there a cat?", 1),
        QuestionNode(2, "Does the cat have a visible tail?", 2),
        QuestionNode(3, "Is the cat's tail black?", 3),
    ]
    edges = [DependencyEdge(1, 2), DependencyEdge(2, 3)]
    return build_graph(tuples, questions, edges, prompt_id="chain")
