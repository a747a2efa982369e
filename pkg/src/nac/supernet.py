"""The over-parameterized mixture network searched over.

Layer l computes  h^l = act( W_l @ mix_l )  where  mix_l is the candidate
outputs combined with the layer's L2-normalized coefficient row:

    mix_l = sum_k  (alpha[l, k] / ||alpha[l]||_2) * op_k(h^{l-1})

All weights (input projection, per-layer W_l, per-operator parameters,
output head W_o) are drawn once at build time from the chosen init scheme
and stay fixed unless a training mode opts specific groups in. The
coefficient matrix alpha starts at all ones.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tt
from .exceptions import ConfigError, ShapeError
from .graph import Graph
from .operators import (
    OPERATOR_NAMES,
    OperatorKind,
    OperatorParams,
    PropagationSet,
    apply_operator,
    init_operator_params,
    init_weight,
    prepare_propagation,
)
from .tensor import Tensor

__all__ = [
    "SearchSpaceConfig",
    "Supernet",
    "ArchitectureSelection",
    "build_supernet",
    "mixed_layer_forward",
    "supernet_forward",
    "single_path_features",
    "single_path_forward",
    "derive_architecture",
    "weights_fingerprint",
]

DEFAULT_OPERATORS = tuple(OPERATOR_NAMES)


@dataclass
class SearchSpaceConfig:
    """Shape of the search space and of the shared supernet weights."""

    num_layers: int = 3
    operators: tuple = DEFAULT_OPERATORS
    hidden_dim: int = 64
    init_scheme: str = "orthogonal"
    activation: str = "relu"
    cheb_order: int = 2

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if len(self.operators) < 1:
            raise ConfigError("operator list is empty")
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"activation must be 'relu' or 'identity', got {self.activation!r}")
        self.operators = tuple(self.operators)
        for name in self.operators:
            if name not in OPERATOR_NAMES:
                raise ConfigError(f"unknown operator {name!r}; choose from {OPERATOR_NAMES}")
        if len(set(self.operators)) != len(self.operators):
            raise ConfigError("duplicate operator names")

    def kinds(self) -> list[OperatorKind]:
        return [OperatorKind(t, self.cheb_order) if t == "cheb" else OperatorKind(t) for t in self.operators]


@dataclass
class Supernet:
    cfg: SearchSpaceConfig
    prop: PropagationSet
    alpha: Tensor                     # (L, K), requires_grad during search
    input_proj: np.ndarray            # (F, hidden), never trained
    layer_weights: list               # L Tensors (hidden, hidden)
    op_params: list                   # [layer][k] OperatorParams
    w_out: Tensor                     # (hidden, C)
    h0: np.ndarray                    # cached projected features
    num_classes: int
    seed: int

    @property
    def num_layers(self) -> int:
        return self.cfg.num_layers

    @property
    def num_operators(self) -> int:
        return len(self.cfg.operators)

    def set_mode_flags(self, train_weights: bool, train_output: bool) -> None:
        self.alpha.requires_grad = True
        self.w_out.requires_grad = train_output
        for w in self.layer_weights:
            w.requires_grad = train_weights
        for layer in self.op_params:
            for p in layer:
                p.set_requires_grad(train_weights)

    def weight_tensors(self, include_output: bool) -> dict[str, Tensor]:
        """Every weight Tensor by a stable name; excludes alpha."""
        out: dict[str, Tensor] = {}
        for l, w in enumerate(self.layer_weights):
            out[f"layer{l}.w"] = w
        for l, layer in enumerate(self.op_params):
            for k, p in enumerate(layer):
                for name, t in p.tensors.items():
                    out[f"layer{l}.op{k}.{name}"] = t
        if include_output:
            out["w_out"] = self.w_out
        return out


@dataclass
class ArchitectureSelection:
    """The derived single-operator-per-layer architecture."""

    operator_names: list
    layer_indices: list
    alpha: np.ndarray
    cheb_order: int = 2

    def to_json_dict(self) -> dict:
        return {
            "layers": list(self.operator_names),
            "alpha": [[float(v) for v in row] for row in self.alpha],
        }

    @classmethod
    def from_json_dict(cls, d: dict, operators: tuple = DEFAULT_OPERATORS, cheb_order: int = 2) -> "ArchitectureSelection":
        layers = list(d["layers"])
        for name in layers:
            if name not in OPERATOR_NAMES:
                raise ConfigError(f"unknown operator {name!r} in architecture")
        alpha = np.asarray(d.get("alpha", np.zeros((len(layers), len(operators)))), dtype=np.float64)
        idx = [operators.index(n) if n in operators else -1 for n in layers]
        return cls(layers, idx, alpha, cheb_order)


def build_supernet(cfg: SearchSpaceConfig, graph: Graph, seed: int = 0) -> Supernet:
    """Draw all weights for a graph and cache the projected features.

    The input projection is sampled first and applied eagerly: no mode
    ever trains it, so h0 is a constant of the run.
    """
    if graph.num_classes > cfg.hidden_dim:
        raise ConfigError(
            f"hidden_dim {cfg.hidden_dim} smaller than num_classes {graph.num_classes}"
        )
    rng = np.random.default_rng(seed)
    kinds = cfg.kinds()
    h = cfg.hidden_dim
    input_proj = init_weight(cfg.init_scheme, rng, graph.feature_dim, h)
    layer_weights = [Tensor(init_weight(cfg.init_scheme, rng, h, h)) for _ in range(cfg.num_layers)]
    op_params = [
        [init_operator_params(k, h, cfg.init_scheme, rng) for k in kinds]
        for _ in range(cfg.num_layers)
    ]
    w_out = Tensor(init_weight(cfg.init_scheme, rng, h, graph.num_classes))
    alpha = Tensor(np.ones((cfg.num_layers, len(kinds))), requires_grad=True)
    return Supernet(
        cfg=cfg,
        prop=prepare_propagation(graph),
        alpha=alpha,
        input_proj=input_proj,
        layer_weights=layer_weights,
        op_params=op_params,
        w_out=w_out,
        h0=graph.features @ input_proj,
        num_classes=graph.num_classes,
        seed=seed,
    )


def _activate(cfg: SearchSpaceConfig, x: Tensor) -> Tensor:
    return tt.relu(x) if cfg.activation == "relu" else x


def mixed_layer_forward(net: Supernet, layer: int, h: Tensor) -> Tensor:
    coeffs = tt.l2_normalize_vector(tt.gather_rows(net.alpha, [layer]))
    outs = [apply_operator(p, net.prop, h) for p in net.op_params[layer]]
    mix = tt.linear_combination(outs, coeffs)
    return _activate(net.cfg, tt.matmul(mix, net.layer_weights[layer]))


def supernet_forward(net: Supernet) -> Tensor:
    h = Tensor(net.h0)
    for l in range(net.num_layers):
        h = mixed_layer_forward(net, l, h)
    return tt.matmul(h, net.w_out)


def single_path_features(net: Supernet, selection: list) -> Tensor:
    """Penultimate representation of the one-operator-per-layer path
    (everything up to, not including, the output head)."""
    if len(selection) != net.num_layers:
        raise ShapeError(f"selection needs {net.num_layers} entries, got {len(selection)}")
    h = Tensor(net.h0)
    for l, k in enumerate(selection):
        out = apply_operator(net.op_params[l][k], net.prop, h)
        h = _activate(net.cfg, tt.matmul(out, net.layer_weights[l]))
    return h


def single_path_forward(net: Supernet, selection: list) -> Tensor:
    """Forward through one operator per layer (one-hot mixture), using the
    supernet's own weights. Used for cheap mid-search probes."""
    return tt.matmul(single_path_features(net, selection), net.w_out)


def derive_architecture(net: Supernet) -> ArchitectureSelection:
    """Keep the operator with the largest |alpha| per layer (first index
    wins ties, which cannot happen after any real update)."""
    a = net.alpha.data
    idx = [int(np.argmax(np.abs(a[l]))) for l in range(net.num_layers)]
    names = [net.cfg.operators[k] for k in idx]
    return ArchitectureSelection(names, idx, a.copy(), net.cfg.cheb_order)


def weights_fingerprint(net: Supernet, include_output: bool = True) -> str:
    """SHA-256 over every fixed weight byte, in a stable order. alpha is
    excluded: it is the only thing the plain search mode may change."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(net.input_proj).tobytes())
    tensors = net.weight_tensors(include_output)
    for name in sorted(tensors):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(tensors[name].data).tobytes())
    return digest.hexdigest()
