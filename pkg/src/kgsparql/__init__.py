"""Tool-using language model agent that answers questions with SPARQL over RDF knowledge graphs."""

from kgsparql.agent import (
    Answered,
    Cancelled,
    Exhausted,
    FeedbackVerdict,
    FunctionSet,
    SessionConfig,
    SessionTrace,
    build_instruction,
    run_session,
)
from kgsparql.catalog import Catalog, ItemRecord, KnowledgeGraphConfig, load_catalog, load_item_records
from kgsparql.evaluation import BenchmarkSample, EvalScore, assignment_f1, exact_f1, row_match, score_sample
from kgsparql.keyword_index import KeywordIndex
from kgsparql.sparql import Cell, QueryError, ResultTable, SparqlClient, execute_sparql, render_table
from kgsparql.toolbox import FUNCTION_SPECS, FunctionResult, Toolbox
from kgsparql.vector_index import HashingEmbedder, VectorIndex, build_vector_index

__version__ = "0.1.0"

__all__ = [
    "Answered", "BenchmarkSample", "Cancelled", "Catalog", "Cell", "EvalScore", "Exhausted",
    "FUNCTION_SPECS", "FeedbackVerdict", "FunctionResult", "FunctionSet", "HashingEmbedder",
    "ItemRecord", "KeywordIndex", "KnowledgeGraphConfig", "QueryError", "ResultTable",
    "SessionConfig", "SessionTrace", "SparqlClient", "Toolbox", "VectorIndex", "assignment_f1",
    "build_instruction", "build_vector_index", "exact_f1", "execute_sparql", "load_catalog",
    "load_item_records", "render_table", "row_match", "run_session", "score_sample",
]
