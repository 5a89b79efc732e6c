"""Exact query evaluation on uncertain data of bounded treewidth.

Uncertain relational instances (TID, c-, pc- and pcc-instances), PrXML
documents and labelled partial orders, with lineage circuits built by tree
automata over tree decompositions and probabilities by message passing.
"""

from .circuits import Circuit, CircuitBuilder, Gate, evaluate, is_monotone
from .errors import (
    AnnotationSyntaxError,
    CircuitError,
    DecompositionError,
    IncompleteValuationError,
    InputError,
    LimitExceeded,
    QuerySyntaxError,
    SchemaError,
    UncertainError,
)
from .instances import (
    CInstance,
    Fact,
    Instance,
    PCCInstance,
    PCInstance,
    Schema,
    TIDInstance,
    fact,
    load_instance,
    query_probability_bruteforce,
    tid_to_pc,
)
from .lineage import LineageResult, build_lineage
from .prob import prob_bruteforce, prob_message_passing, prob_query
from .query import Query, compile, parse_query, run
from .treedec import TreeDecomposition, build_graph, decompose, root_and_binarize, validate

__version__ = "0.1.0"
