"""Coefficient-only architecture search over the frozen mixture network.

One search epoch is a single forward/backward over the whole graph: the
masked cross entropy is differentiated on the tape, an explicit L1
subgradient rho * sign(alpha) is added (sign(0) = 0), and Adam updates
the coefficients. The plain mode touches nothing else, which is what
makes its per-epoch update cost L*K numbers regardless of hidden width.

Two richer modes alternate a weight step after the coefficient step:
'plus' trains the output head, 'updating' trains every weight. Weights
take SGD with a cosine-annealed learning rate; coefficients always take
Adam.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tt
from .exceptions import ConfigError, NonFiniteLossError
from .graph import Graph, Split
from .supernet import (
    ArchitectureSelection,
    SearchSpaceConfig,
    Supernet,
    build_supernet,
    derive_architecture,
    single_path_features,
    supernet_forward,
)
from .tensor import Tape, Tensor

__all__ = [
    "MODES",
    "SearchConfig",
    "SearchTrace",
    "AdamState",
    "SgdState",
    "adam_step",
    "sgd_step",
    "cosine_lr",
    "l1_subgradient",
    "nac_objective",
    "updated_parameter_count",
    "search",
]

MODES = ("nac", "nac_plus", "nac_updating")

ARCH_LR = 3e-4
ARCH_WEIGHT_DECAY = 1e-3
ARCH_BETAS = (0.5, 0.999)
WEIGHT_LR = 0.025
WEIGHT_DECAY = 5e-4
WEIGHT_MOMENTUM = 0.0


@dataclass
class SearchConfig:
    """Everything one search run depends on besides the data."""

    mode: str = "nac"
    epochs: int = 100
    rho: float = 1e-3
    arch_lr: float = ARCH_LR
    arch_weight_decay: float = ARCH_WEIGHT_DECAY
    arch_betas: tuple = ARCH_BETAS
    weight_lr: float = WEIGHT_LR
    weight_decay: float = WEIGHT_DECAY
    weight_momentum: float = WEIGHT_MOMENTUM
    seed: int = 0
    track_val_curve: bool = False
    space: SearchSpaceConfig = field(default_factory=SearchSpaceConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")
        if not (self.arch_lr > 0 and self.weight_lr > 0):
            raise ConfigError("learning rates must be positive")


@dataclass
class SearchTrace:
    """Per-epoch scalars plus coefficient snapshots."""

    epochs: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    ce: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    ms: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    updated_params: int = 0
    mode: str = "nac"
    seed: int = 0
    dataset: str = ""

    def append(self, epoch, objective, ce, l1, ms, alpha):
        self.epochs.append(int(epoch))
        self.objective.append(float(objective))
        self.ce.append(float(ce))
        self.l1.append(float(l1))
        self.ms.append(float(ms))
        self.alphas.append(np.asarray(alpha, dtype=np.float64).copy())

    @property
    def total_seconds(self) -> float:
        return sum(self.ms) / 1000.0

    def mean_epoch_ms(self) -> float:
        return float(np.mean(self.ms)) if self.ms else 0.0

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "ce", "l1", "ms"])
            for i in range(len(self.epochs)):
                w.writerow(
                    [
                        self.epochs[i],
                        repr(self.objective[i]),
                        repr(self.ce[i]),
                        repr(self.l1[i]),
                        repr(self.ms[i]),
                    ]
                )

    def write_alpha_json(self, path: str, manifest: Optional[str] = None) -> None:
        payload = {
            "mode": self.mode,
            "seed": self.seed,
            "alpha_per_epoch": [a.tolist() for a in self.alphas],
        }
        if self.val_acc:
            payload["val_acc_per_epoch"] = [float(v) for v in self.val_acc]
        if manifest is not None:
            payload["manifest"] = manifest
        with open(path, "w") as f:
            json.dump(payload, f)
            f.write("\n")


@dataclass
class AdamState:
    """First/second moment buffers keyed like the parameter dict."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class SgdState:
    momentum_buf: dict = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: dict,
    grads: dict,
    lr: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """Classic Adam with L2 weight decay folded into the gradient.

    params maps names to ndarrays updated in place; grads must supply
    every name in params.
    """
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if weight_decay:
            g = g + weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)


def sgd_step(
    state: SgdState,
    params: dict,
    grads: dict,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> None:
    for name, p in params.items():
        g = grads[name]
        if weight_decay:
            g = g + weight_decay * p
        if momentum:
            buf = state.momentum_buf.get(name)
            if buf is None:
                buf = np.zeros_like(p)
                state.momentum_buf[name] = buf
            buf *= momentum
            buf += g
            g = buf
        p -= lr * g


def cosine_lr(base_lr: float, epoch: int, total_epochs: int, min_lr: float = 0.0) -> float:
    """Half-cosine anneal from base_lr at epoch 0 toward min_lr."""
    if total_epochs <= 1:
        return base_lr
    frac = epoch / (total_epochs - 1)
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + np.cos(np.pi * frac))


def l1_subgradient(alpha: np.ndarray) -> np.ndarray:
    """sign(alpha) with the 0-at-0 convention."""
    return np.sign(alpha)


def nac_objective(net: Supernet, graph: Graph, train_idx, rho: float):
    """Forward the mixture net and assemble the sparse-coding objective.

    Returns (ce_tensor, objective_value, ce_value, l1_value). The code
    reconstruction term vanishes identically because the dictionary entry
    is the network's own top representation, so the differentiable part
    on the tape is the cross entropy alone; the L1 term is handled by an
    explicit subgradient at update time.
    """
    logits = supernet_forward(net)
    ce = tt.cross_entropy(logits, graph.labels, train_idx)
    l1 = float(np.abs(net.alpha.data).sum())
    ce_val = ce.item()
    return ce, ce_val + rho * l1, ce_val, l1


def updated_parameter_count(cfg: SearchConfig, net: Supernet) -> int:
    """Numbers moved per epoch: L*K coefficients always; the output head
    in plus mode; every weight except the input projection when updating."""
    count = net.alpha.data.size
    if cfg.mode == "nac_plus":
        count += net.w_out.data.size
    elif cfg.mode == "nac_updating":
        count += net.w_out.data.size
        count += sum(w.data.size for w in net.layer_weights)
        count += sum(p.size() for layer in net.op_params for p in layer)
    return count


def _masked_accuracy(logits: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    pred = logits[idx].argmax(axis=1)
    return float((pred == labels[idx]).mean())


def _probe_val_accuracy(net: Supernet, sel, graph: Graph, split: Split) -> float:
    """Derived-architecture quality probe: closed-form least-squares head
    fit on the train rows of the one-hot path's penultimate features,
    scored on val. A readout fit is needed because the frozen random
    output head would pin the probe at chance in the no-update mode."""
    h = single_path_features(net, sel.layer_indices).data
    ones = np.ones((h.shape[0], 1))
    x = np.hstack([h, ones])
    y = np.eye(net.num_classes)[graph.labels[split.train]]
    w, *_ = np.linalg.lstsq(x[split.train], y, rcond=None)
    return _masked_accuracy(x @ w, graph.labels, split.val)


def search(
    cfg: SearchConfig, graph: Graph, split: Split, net: Optional[Supernet] = None
) -> tuple[ArchitectureSelection, SearchTrace, Supernet]:
    """Run one architecture search and derive the selection.

    Only split.train drives the objective; split.val is read solely for
    the optional per-epoch probe and split.test is never touched here.
    """
    if net is None:
        net = build_supernet(cfg.space, graph, cfg.seed)
    trace = SearchTrace(mode=cfg.mode, seed=cfg.seed, dataset=graph.name)
    trace.updated_params = updated_parameter_count(cfg, net)

    adam = AdamState()
    sgd = SgdState()
    weight_tensors = (
        net.weight_tensors(include_output=True)
        if cfg.mode == "nac_updating"
        else {"w_out": net.w_out}
        if cfg.mode == "nac_plus"
        else {}
    )

    def flag_weights(on: bool) -> None:
        for t in weight_tensors.values():
            t.requires_grad = on

    # each pass computes only the gradients its update consumes
    flag_weights(False)
    net.alpha.requires_grad = True

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        with Tape() as tape:
            ce, obj, ce_val, l1_val = nac_objective(net, graph, split.train, cfg.rho)
        if not np.isfinite(ce_val):
            raise NonFiniteLossError(f"objective became non-finite at epoch {epoch}")
        grads = tape.backward(ce)
        g_alpha = grads[net.alpha] + cfg.rho * l1_subgradient(net.alpha.data)
        adam_step(
            adam,
            {"alpha": net.alpha.data},
            {"alpha": g_alpha},
            lr=cfg.arch_lr,
            betas=cfg.arch_betas,
            weight_decay=cfg.arch_weight_decay,
        )
        row_norms = np.linalg.norm(net.alpha.data, axis=1)
        if np.any(row_norms < 1e-12):
            bad = int(np.argmin(row_norms))
            raise NonFiniteLossError(
                f"coefficient row {bad} collapsed to norm {row_norms[bad]:.3e} at epoch {epoch}"
            )

        if weight_tensors:
            # alternation: fresh forward after the coefficient move
            flag_weights(True)
            net.alpha.requires_grad = False
            with Tape() as tape2:
                ce2 = tt.cross_entropy(supernet_forward(net), graph.labels, split.train)
            grads2 = tape2.backward(ce2)
            sgd_step(
                sgd,
                {name: t.data for name, t in weight_tensors.items()},
                {name: grads2[t] for name, t in weight_tensors.items()},
                lr=cosine_lr(cfg.weight_lr, epoch, cfg.epochs),
                momentum=cfg.weight_momentum,
                weight_decay=cfg.weight_decay,
            )
            flag_weights(False)
            net.alpha.requires_grad = True

        ms = (time.perf_counter() - t0) * 1000.0
        trace.append(epoch, obj, ce_val, l1_val, ms, net.alpha.data)
        if cfg.track_val_curve:
            trace.val_acc.append(_probe_val_accuracy(net, derive_architecture(net), graph, split))

    return derive_architecture(net), trace, net
