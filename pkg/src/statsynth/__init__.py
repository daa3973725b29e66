"""Distribution-guided synthetic tabular data.

The package generates synthetic records by iteratively matching the
summary statistics (marginal frequency tables over quantile bins, joint
contingency tables over inferred variable components) of a real dataset.
Proposals come either from a deterministic greedy oracle or from a
chat-completion endpoint speaking JSON.
"""

from .errors import ProposerError, SynthError
from .llm import LlmProposer, ProposerConfig
from .loop import LoopConfig, run
from .metrics import metric_suite
from .oracle import OracleProposer
from .reference import EcommerceParams, generate
from .schema import (
    Continuous,
    Dataset,
    Discrete,
    Record,
    Variable,
    VariableSchema,
    concat,
    load_csv,
    load_schema,
    save_csv,
    save_schema,
)

__all__ = [
    "ProposerError",
    "SynthError",
    "LlmProposer",
    "ProposerConfig",
    "LoopConfig",
    "run",
    "metric_suite",
    "OracleProposer",
    "EcommerceParams",
    "generate",
    "Continuous",
    "Dataset",
    "Discrete",
    "Record",
    "Variable",
    "VariableSchema",
    "concat",
    "load_csv",
    "load_schema",
    "save_csv",
    "save_schema",
]

__version__ = "0.1.0"
