"""Mixture-network tests: coefficient normalization, frozen-weight
spectra, selection rules, and fingerprint stability."""

import numpy as np
import pytest

import nac.tensor as T
from nac.exceptions import ConfigError
from nac.graph import Graph, synth_graph
from nac.operators import apply_operator
from nac.supernet import (
    ArchitectureSelection,
    SearchSpaceConfig,
    build_supernet,
    derive_architecture,
    mixed_layer_forward,
    single_path_forward,
    supernet_forward,
    weights_fingerprint,
)
from oracles import rel_err

RNG = np.random.default_rng(29)


@pytest.fixture(scope="module")
def small_graph():
    g, s = synth_graph(
        "sbm", {"nodes": 14, "blocks": 2, "p_in": 0.7, "p_out": 0.1, "noise": 0.2}, seed=8
    )
    return g, s


def small_cfg(**kw):
    base = dict(num_layers=3, hidden_dim=8, operators=("mlp", "gcn", "gin"))
    base.update(kw)
    return SearchSpaceConfig(**base)


class TestBuild:
    def test_alpha_starts_at_ones(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=0)
        assert np.array_equal(net.alpha.data, np.ones((3, 3)))
        assert net.alpha.requires_grad

    def test_orthogonal_product_has_flat_spectrum(self, small_graph):
        # product of the three layer weights at hidden 8: all singular
        # values 1 within 1e-6
        g, _ = small_graph
        net = build_supernet(small_cfg(hidden_dim=8), g, seed=1)
        prod = np.linalg.multi_dot([w.data for w in net.layer_weights])
        sv = np.linalg.svd(prod, compute_uv=False)
        assert np.abs(sv - 1.0).max() < 1e-6

    def test_product_orthogonality_precondition(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=2)
        prod = np.linalg.multi_dot([w.data for w in net.layer_weights])
        assert np.abs(prod.T @ prod - np.eye(8)).max() < 1e-10

    def test_h0_is_projected_features(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=3)
        assert np.allclose(net.h0, g.features @ net.input_proj)

    def test_hidden_smaller_than_classes_rejected(self, small_graph):
        g, _ = small_graph
        with pytest.raises(ConfigError, match="num_classes"):
            build_supernet(small_cfg(hidden_dim=1), g, seed=0)

    def test_build_deterministic_per_seed(self, small_graph):
        g, _ = small_graph
        a = build_supernet(small_cfg(), g, seed=5)
        b = build_supernet(small_cfg(), g, seed=5)
        assert weights_fingerprint(a) == weights_fingerprint(b)
        c = build_supernet(small_cfg(), g, seed=6)
        assert weights_fingerprint(a) != weights_fingerprint(c)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SearchSpaceConfig(num_layers=0)
        with pytest.raises(ConfigError):
            SearchSpaceConfig(operators=())
        with pytest.raises(ConfigError):
            SearchSpaceConfig(operators=("mlp", "mlp"))
        with pytest.raises(ConfigError):
            SearchSpaceConfig(operators=("conv2d",))
        with pytest.raises(ConfigError):
            SearchSpaceConfig(activation="gelu")


class TestForward:
    def test_mixture_matches_manual_combination(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=7)
        net.alpha.data[:] = RNG.standard_normal((3, 3)) + 2.0
        h = T.Tensor(net.h0)
        out = mixed_layer_forward(net, 0, h)
        coeffs = net.alpha.data[0] / np.linalg.norm(net.alpha.data[0])
        manual = sum(
            coeffs[k] * apply_operator(net.op_params[0][k], net.prop, h).data for k in range(3)
        )
        manual = np.maximum(manual @ net.layer_weights[0].data, 0)
        assert rel_err(out.data, manual) < 1e-12

    def test_zero_features_give_zero_logits(self, small_graph):
        g, _ = small_graph
        gz = Graph(g.num_nodes, g.edges, np.zeros_like(g.features), g.labels, g.num_classes, "z")
        cfg = SearchSpaceConfig(num_layers=3, hidden_dim=8)  # all ten operators
        net = build_supernet(cfg, gz, seed=9)
        logits = supernet_forward(net)
        assert np.all(logits.data == 0.0)

    def test_logits_shape(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=0)
        assert supernet_forward(net).shape == (g.num_nodes, g.num_classes)

    def test_initial_ce_near_log_c(self):
        # Monte Carlo over seeds: with orthogonal frozen weights the
        # initial masked CE sits near ln(C)
        g, s = synth_graph(
            "sbm",
            {"nodes": 60, "blocks": 4, "p_in": 0.4, "p_out": 0.05, "feature_mode": "bow",
             "feature_dim": 48, "nnz_per_row": 6},
            seed=11,
        )
        vals = []
        for seed in range(5):
            net = build_supernet(SearchSpaceConfig(hidden_dim=16), g, seed=seed)
            with T.Tape():
                ce = T.cross_entropy(supernet_forward(net), g.labels, s.train)
            vals.append(ce.item())
        assert abs(np.mean(vals) - np.log(4)) < 0.5

    def test_single_path_matches_isolated_stack(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=13)
        sel = [1, 0, 2]
        out = single_path_forward(net, sel)
        h = T.Tensor(net.h0)
        for l, k in enumerate(sel):
            op = apply_operator(net.op_params[l][k], net.prop, h)
            h = T.relu(T.matmul(op, net.layer_weights[l]))
        manual = T.matmul(h, net.w_out)
        assert np.array_equal(out.data, manual.data)


class TestSelection:
    def test_argmax_of_abs_alpha(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=0)
        net.alpha.data[:] = [[0.1, -0.9, 0.2], [0.5, 0.1, -0.4], [-0.05, 0.01, 0.02]]
        sel = derive_architecture(net)
        assert sel.layer_indices == [1, 0, 0]
        assert sel.operator_names == ["gcn", "mlp", "mlp"]
        assert np.array_equal(sel.alpha, net.alpha.data)

    def test_json_round_trip(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=0)
        sel = derive_architecture(net)
        d = sel.to_json_dict()
        assert set(d) == {"layers", "alpha"}
        back = ArchitectureSelection.from_json_dict(d, operators=("mlp", "gcn", "gin"))
        assert back.operator_names == sel.operator_names
        assert np.allclose(back.alpha, sel.alpha)

    def test_unknown_operator_in_json(self):
        with pytest.raises(ConfigError, match="unknown operator"):
            ArchitectureSelection.from_json_dict({"layers": ["resnet"], "alpha": [[1.0]]})


class TestFingerprint:
    def test_alpha_excluded_weights_included(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=4)
        before = weights_fingerprint(net)
        net.alpha.data[:] *= 3.0
        assert weights_fingerprint(net) == before
        net.layer_weights[1].data[0, 0] += 1e-9
        assert weights_fingerprint(net) != before

    def test_output_head_toggle(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=4)
        partial = weights_fingerprint(net, include_output=False)
        net.w_out.data[0, 0] += 1.0
        assert weights_fingerprint(net, include_output=False) == partial
        assert weights_fingerprint(net, include_output=True) != partial

    def test_mode_flags(self, small_graph):
        g, _ = small_graph
        net = build_supernet(small_cfg(), g, seed=4)
        net.set_mode_flags(train_weights=False, train_output=False)
        assert not net.w_out.requires_grad
        assert not any(w.requires_grad for w in net.layer_weights)
        net.set_mode_flags(train_weights=True, train_output=True)
        assert net.w_out.requires_grad
        assert all(w.requires_grad for w in net.layer_weights)
        assert all(
            t.requires_grad for layer in net.op_params for p in layer for t in p.tensors.values()
        )
