"""Estimator-style wrappers over the functional search/retrain core.

These follow the scikit-learn parameter conventions (constructor args
stored verbatim, fitted state on trailing-underscore attributes, clone
and get_params/set_params working out of the box) so runs compose with
standard tooling. The heavy lifting stays in search() and retrain().
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .evaluation import RetrainConfig, retrain
from .exceptions import ConfigError
from .graph import Graph, Split, validate_graph, validate_split
from .operators import OPERATOR_NAMES
from .search import SearchConfig, search
from .supernet import ArchitectureSelection, SearchSpaceConfig

__all__ = ["ArchitectureSearch", "RetrainedGnn"]


def _check_inputs(graph: Graph, split: Split) -> None:
    if not isinstance(graph, Graph):
        raise ConfigError(f"expected a Graph, got {type(graph).__name__}")
    validate_graph(graph)
    validate_split(split, graph.num_nodes)


class ArchitectureSearch(BaseEstimator):
    """fit(graph, split) runs one coefficient search; the derived
    architecture lands on selection_ and the per-epoch record on trace_."""

    def __init__(
        self,
        mode: str = "nac",
        epochs: int = 100,
        rho: float = 1e-3,
        num_layers: int = 3,
        hidden_dim: int = 64,
        operators: tuple = OPERATOR_NAMES,
        init_scheme: str = "orthogonal",
        seed: int = 0,
        track_val_curve: bool = False,
    ):
        self.mode = mode
        self.epochs = epochs
        self.rho = rho
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.operators = operators
        self.init_scheme = init_scheme
        self.seed = seed
        self.track_val_curve = track_val_curve

    def _config(self) -> SearchConfig:
        return SearchConfig(
            mode=self.mode,
            epochs=self.epochs,
            rho=self.rho,
            seed=self.seed,
            track_val_curve=self.track_val_curve,
            space=SearchSpaceConfig(
                num_layers=self.num_layers,
                hidden_dim=self.hidden_dim,
                operators=tuple(self.operators),
                init_scheme=self.init_scheme,
            ),
        )

    def fit(self, graph: Graph, split: Split) -> "ArchitectureSearch":
        _check_inputs(graph, split)
        selection, trace, net = search(self._config(), graph, split)
        self.selection_ = selection
        self.trace_ = trace
        self.supernet_ = net
        return self

    @property
    def architecture_(self) -> list:
        return list(self.selection_.operator_names)


class RetrainedGnn(BaseEstimator):
    """fit(graph, split) trains a fixed architecture from scratch;
    predict(graph) labels every node."""

    def __init__(
        self,
        architecture=("gcn", "gcn", "gcn"),
        epochs: int = 400,
        lr: float = 0.01,
        weight_decay: float = 5e-4,
        hidden_dim: int = 64,
        dropout: float = 0.5,
        seed: int = 0,
    ):
        self.architecture = architecture
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.seed = seed

    def _arch(self) -> ArchitectureSelection:
        if isinstance(self.architecture, ArchitectureSelection):
            return self.architecture
        names = list(self.architecture)
        return ArchitectureSelection(names, [-1] * len(names), np.zeros((len(names), 1)))

    def _config(self) -> RetrainConfig:
        return RetrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            hidden_dim=self.hidden_dim,
            dropout=self.dropout,
        )

    def fit(self, graph: Graph, split: Split) -> "RetrainedGnn":
        _check_inputs(graph, split)
        from .evaluation import _fit_model

        model, best_val, best_epoch = _fit_model(
            self._arch(), graph, split, self._config(), self.seed
        )
        self.model_ = model
        self.classes_ = np.arange(graph.num_classes)
        self.val_accuracy_ = max(best_val, 0.0)
        self.best_val_epoch_ = best_epoch
        return self

    def predict(self, graph: Graph) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise ConfigError("predict called before fit")
        return self.model_.forward(train=False).data.argmax(axis=1)

    def score(self, graph: Graph, indices) -> float:
        pred = self.predict(graph)
        idx = np.asarray(indices, dtype=np.int64)
        return float((pred[idx] == graph.labels[idx]).mean())
