"""Linear-time architecture search for GNNs with frozen random weights."""

__version__ = "0.1.0"

from .exceptions import (
    ConfigError,
    DatasetError,
    DegenerateCoefficientError,
    NacError,
    NonFiniteLossError,
    ShapeError,
    SingularProductError,
)
from .tensor import SparseMatrix, Tape, Tensor
from .graph import Graph, Split, load_graph, row_normalize_features, synth_graph, write_graph
from .operators import OPERATOR_NAMES
from .supernet import ArchitectureSelection, SearchSpaceConfig, Supernet, build_supernet
from .search import SearchConfig, SearchTrace, search
from .evaluation import Metrics, RetrainConfig, random_search_baseline, retrain
from .estimators import ArchitectureSearch, RetrainedGnn

__all__ = [
    "__version__",
    "ConfigError",
    "DatasetError",
    "DegenerateCoefficientError",
    "NacError",
    "NonFiniteLossError",
    "ShapeError",
    "SingularProductError",
    "SparseMatrix",
    "Tape",
    "Tensor",
    "Graph",
    "Split",
    "load_graph",
    "write_graph",
    "synth_graph",
    "row_normalize_features",
    "OPERATOR_NAMES",
    "ArchitectureSelection",
    "SearchSpaceConfig",
    "Supernet",
    "build_supernet",
    "SearchConfig",
    "SearchTrace",
    "search",
    "Metrics",
    "RetrainConfig",
    "retrain",
    "random_search_baseline",
    "ArchitectureSearch",
    "RetrainedGnn",
]
