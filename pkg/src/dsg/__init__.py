"""Dependency-aware question-graph evaluation of text-to-image alignment.

A prompt is decomposed into atomic semantic tuples, each asked as a
yes/no question; entailment edges between questions form a DAG so that a
question is only counted (or even asked) when everything it presupposes
held.  The package covers generation of these graphs through pluggable
LLM backends, scoring against pluggable VQA backends, quality metrics,
rank correlations against human ratings, and report emission.
"""

__version__ = "0.1.0"

from .graph import (
    ARITY,
    SUBCATEGORIES,
    Category,
    DependencyEdge,
    QuestionNode,
    SceneGraph,
    SemanticTuple,
    Subcategory,
    build_graph,
    descendants,
    topological_order,
)

__all__ = [
    "ARITY",
    "SUBCATEGORIES",
    "Category",
    "DependencyEdge",
    "QuestionNode",
    "SceneGraph",
    "SemanticTuple",
    "Subcategory",
    "build_graph",
    "descendants",
    "topological_order",
    "__version__",
]
