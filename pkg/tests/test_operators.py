"""Operator zoo tests: dense value oracles, finite-difference input
gradients, permutation equivariance, and init-scheme statistics."""

import numpy as np
import pytest

import nac.tensor as T
from nac.exceptions import ConfigError
from nac.graph import Graph, synth_graph
from nac.operators import (
    LEAKY_SLOPE,
    OPERATOR_NAMES,
    OperatorKind,
    apply_operator,
    init_operator_params,
    init_weight,
    kaiming_normal_init,
    kaiming_uniform_init,
    orthogonal_init,
    prepare_propagation,
)
from oracles import fd_grad, rel_err

RNG = np.random.default_rng(13)
HID = 5


@pytest.fixture(scope="module")
def fixture12():
    """12-node fixture with an isolated node (11) to exercise guards."""
    g, _ = synth_graph("sbm", {"nodes": 12, "blocks": 3, "p_in": 0.8, "p_out": 0.15}, seed=21)
    edges = g.edges[(g.edges[:, 0] != 11) & (g.edges[:, 1] != 11)]
    g = Graph(12, edges, RNG.standard_normal((12, HID)), g.labels, 3, "fix12")
    return g, prepare_propagation(g)


def params_for(tag, seed=3):
    kind = OperatorKind(tag)
    return init_operator_params(kind, HID, "orthogonal", np.random.default_rng(seed))


def leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def neighbors(g, i, with_self):
    out = set()
    for s, d in g.edges:
        if s == i:
            out.add(int(d))
        if d == i:
            out.add(int(s))
    if with_self:
        out.add(i)
    return sorted(out)


def dense_gat_oracle(g, h, a_self, a_nbr, w, score_fn):
    """Per-node attention aggregation computed with explicit loops."""
    n = g.num_nodes
    out = np.zeros_like(h)
    for i in range(n):
        nbrs = neighbors(g, i, with_self=True)
        scores = np.array([score_fn(h, i, j, a_self, a_nbr) for j in nbrs])
        e = np.exp(scores - scores.max())
        att = e / e.sum()
        out[i] = sum(att[t] * h[j] for t, j in enumerate(nbrs))
    return out @ w


class TestValueOracles:
    def test_mlp(self, fixture12):
        g, prop = fixture12
        p = params_for("mlp")
        h = RNG.standard_normal((12, HID))
        out = apply_operator(p, prop, T.Tensor(h))
        assert np.allclose(out.data, h @ p.tensors["w_op"].data)

    def test_gcn_dense_oracle(self, fixture12):
        g, prop = fixture12
        p = params_for("gcn")
        h = RNG.standard_normal((12, HID))
        # oracle: renormalized adjacency built densely from scratch
        a = np.zeros((12, 12))
        for s, d in g.edges:
            a[s, d] = a[d, s] = 1.0
        a += np.eye(12)
        dinv = 1.0 / np.sqrt(a.sum(1))
        ahat = a * dinv[:, None] * dinv[None, :]
        out = apply_operator(p, prop, T.Tensor(h))
        assert np.allclose(out.data, ahat @ h @ p.tensors["w_op"].data)

    def test_gat_dense_oracle(self, fixture12):
        g, prop = fixture12
        p = params_for("gat")
        h = RNG.standard_normal((12, HID))

        def score(hm, i, j, a_s, a_n):
            return leaky(float(hm[i] @ a_s[:, 0] + hm[j] @ a_n[:, 0]))

        expect = dense_gat_oracle(
            g, h, p.tensors["a_self"].data, p.tensors["a_nbr"].data, p.tensors["w_op"].data, score
        )
        out = apply_operator(p, prop, T.Tensor(h))
        assert rel_err(out.data, expect) < 1e-12

    def test_gat_linear_dense_oracle(self, fixture12):
        g, prop = fixture12
        p = params_for("gat_linear")
        h = RNG.standard_normal((12, HID))

        def score(hm, i, j, a_s, a_n):
            return float(hm[j] @ a_n[:, 0])

        expect = dense_gat_oracle(g, h, None, p.tensors["a_nbr"].data, p.tensors["w_op"].data, score)
        out = apply_operator(p, prop, T.Tensor(h))
        assert rel_err(out.data, expect) < 1e-12

    def test_gat_cos_dense_oracle(self, fixture12):
        g, prop = fixture12
        p = params_for("gat_cos")
        h = RNG.standard_normal((12, HID))
        w = p.tensors["w_op"].data
        u = h @ w
        n = 12
        expect = np.zeros_like(u)
        for i in range(n):
            nbrs = neighbors(g, i, with_self=True)
            scores = np.array(
                [u[i] @ u[j] / (np.linalg.norm(u[i]) * np.linalg.norm(u[j])) for j in nbrs]
            )
            e = np.exp(scores - scores.max())
            att = e / e.sum()
            expect[i] = sum(att[t] * u[j] for t, j in enumerate(nbrs))
        out = apply_operator(p, prop, T.Tensor(h))
        assert rel_err(out.data, expect) < 1e-10

    def test_gin_dense_oracle(self, fixture12):
        g, prop = fixture12
        p = params_for("gin")
        p.tensors["eps"].data[0, 0] = 0.3
        h = RNG.standard_normal((12, HID))
        a = np.zeros((12, 12))
        for s, d in g.edges:
            a[s, d] = a[d, s] = 1.0
        pre = (1 + 0.3) * h + a @ h
        expect = np.maximum(pre @ p.tensors["w1"].data, 0) @ p.tensors["w2"].data
        out = apply_operator(p, prop, T.Tensor(h))
        assert np.allclose(out.data, expect)

    def test_gin_eps_starts_at_zero(self):
        assert params_for("gin").tensors["eps"].data[0, 0] == 0.0

    def test_sage_mean_dense_oracle(self, fixture12):
        g, prop = fixture12
        p = params_for("sage_mean")
        h = RNG.standard_normal((12, HID))
        nb = np.zeros_like(h)
        for i in range(12):
            nbrs = neighbors(g, i, with_self=False)
            if nbrs:
                nb[i] = h[nbrs].mean(axis=0)
        expect = np.concatenate([h, nb], axis=1) @ p.tensors["w_op"].data
        out = apply_operator(p, prop, T.Tensor(h))
        assert rel_err(out.data, expect) < 1e-12

    def test_sage_max_isolated_gets_zero_vector(self, fixture12):
        g, prop = fixture12
        p = params_for("sage_max")
        h = RNG.standard_normal((12, HID))
        nb = np.zeros_like(h)
        for i in range(12):
            nbrs = neighbors(g, i, with_self=False)
            if nbrs:
                nb[i] = h[nbrs].max(axis=0)
        expect = np.concatenate([h, nb], axis=1) @ p.tensors["w_op"].data
        out = apply_operator(p, prop, T.Tensor(h))
        assert rel_err(out.data, expect) < 1e-12
        assert not neighbors(g, 11, with_self=False)  # the guard actually fired

    def test_cheb_hand_recurrence(self, fixture12):
        g, prop = fixture12
        p = params_for("cheb")
        h = RNG.standard_normal((12, HID))
        lhat = prop.cheb.to_dense()
        x0, x1 = h, lhat @ h
        x2 = 2 * lhat @ x1 - x0
        expect = (
            x0 @ p.tensors["w0"].data + x1 @ p.tensors["w1"].data + x2 @ p.tensors["w2"].data
        )
        out = apply_operator(p, prop, T.Tensor(h))
        assert rel_err(out.data, expect) < 1e-12

    def test_cheb_order_one(self, fixture12):
        g, prop = fixture12
        kind = OperatorKind("cheb", cheb_order=1)
        p = init_operator_params(kind, HID, "orthogonal", np.random.default_rng(0))
        h = RNG.standard_normal((12, HID))
        lhat = prop.cheb.to_dense()
        expect = h @ p.tensors["w0"].data + lhat @ h @ p.tensors["w1"].data
        out = apply_operator(p, prop, T.Tensor(h))
        assert rel_err(out.data, expect) < 1e-12

    def test_geniepath_gate_oracle(self, fixture12):
        g, prop = fixture12
        p = params_for("geniepath")
        h = RNG.standard_normal((12, HID))

        def score(hm, i, j, a_s, a_n):
            return leaky(float(hm[i] @ a_s[:, 0] + hm[j] @ a_n[:, 0]))

        att_out = dense_gat_oracle(
            g, h, p.tensors["a_self"].data, p.tensors["a_nbr"].data, p.tensors["w_op"].data, score
        )
        expect = np.tanh(h @ p.tensors["w_gate"].data) * att_out
        out = apply_operator(p, prop, T.Tensor(h))
        assert rel_err(out.data, expect) < 1e-12


class TestInputGradients:
    """Every operator's input gradient against central differences."""

    @pytest.mark.parametrize("tag", OPERATOR_NAMES)
    def test_fd_gradient(self, fixture12, tag):
        g, prop = fixture12
        p = params_for(tag)
        w = RNG.standard_normal((HID, 1))
        x0 = RNG.standard_normal((12, HID))

        def scalar(x):
            with T.Tape():
                out = apply_operator(p, prop, T.Tensor(x))
                return T.ssum(T.tanh(T.matmul(out, T.Tensor(w)))).item()

        leaf = T.Tensor(x0, requires_grad=True)
        with T.Tape() as tape:
            out = apply_operator(p, prop, leaf)
            loss = T.ssum(T.tanh(T.matmul(out, T.Tensor(w))))
        analytic = tape.backward(loss)[leaf]
        numeric = fd_grad(scalar, x0, h=1e-6)
        assert rel_err(analytic, numeric) < 1e-7, tag

    @pytest.mark.parametrize("tag", OPERATOR_NAMES)
    def test_parameter_gradients_flow_when_enabled(self, fixture12, tag):
        g, prop = fixture12
        p = params_for(tag)
        p.set_requires_grad(True)
        x = T.Tensor(RNG.standard_normal((12, HID)))
        with T.Tape() as tape:
            out = apply_operator(p, prop, x)
            loss = T.ssum(T.tanh(out))
        grads = tape.backward(loss)
        for name, t in p.tensors.items():
            assert t in grads, f"{tag}.{name} missing"
            assert grads[t].shape == t.data.shape


class TestEquivariance:
    @pytest.mark.parametrize("tag", ["gcn", "gin", "sage_mean", "cheb"])
    def test_permutation_equivariant(self, tag):
        g, _ = synth_graph("sbm", {"nodes": 10, "blocks": 2, "p_in": 0.7, "p_out": 0.2}, seed=4)
        feats = RNG.standard_normal((10, HID))
        g = Graph(10, g.edges, feats, g.labels, 2, "perm")
        p = params_for(tag)
        perm = np.random.default_rng(0).permutation(10)
        # relabel: node i becomes perm[i]
        e2 = perm[g.edges]
        e2 = np.sort(e2, axis=1)
        e2 = e2[np.lexsort((e2[:, 1], e2[:, 0]))]
        g2 = Graph(10, e2, np.empty((10, HID)), g.labels[np.argsort(perm)], 2, "perm")
        g2.features[perm] = feats  # row perm[i] of g2 = row i of g
        out1 = apply_operator(p, prepare_propagation(g), T.Tensor(g.features)).data
        out2 = apply_operator(p, prepare_propagation(g2), T.Tensor(g2.features)).data
        assert rel_err(out2[perm], out1) < 1e-10


class TestInitSchemes:
    def test_orthogonal_square_is_orthogonal(self):
        w = orthogonal_init(np.random.default_rng(0), 16, 16)
        assert np.allclose(w.T @ w, np.eye(16), atol=1e-10)

    def test_orthogonal_tall_has_orthonormal_columns(self):
        w = orthogonal_init(np.random.default_rng(1), 10, 4)
        assert np.allclose(w.T @ w, np.eye(4), atol=1e-10)

    def test_orthogonal_wide_has_orthonormal_rows(self):
        w = orthogonal_init(np.random.default_rng(2), 4, 10)
        assert np.allclose(w @ w.T, np.eye(4), atol=1e-10)

    def test_orthogonal_dim1_is_plus_minus_one(self):
        vals = {orthogonal_init(np.random.default_rng(s), 1, 1)[0, 0] for s in range(20)}
        assert vals <= {-1.0, 1.0}
        assert len(vals) == 2  # both signs occur

    def test_kaiming_normal_variance_monte_carlo(self):
        # pooled over seeds; target 2/64 within 30 percent
        samples = np.concatenate(
            [kaiming_normal_init(np.random.default_rng(s), 64, 64).ravel() for s in range(10)]
        )
        assert abs(samples.var() - 2 / 64) / (2 / 64) < 0.3

    def test_kaiming_uniform_bound_and_variance(self):
        w = kaiming_uniform_init(np.random.default_rng(3), 64, 64)
        bound = np.sqrt(6 / 64)
        assert np.abs(w).max() <= bound
        # uniform variance bound^2/3 = 2/fan_in
        samples = np.concatenate(
            [kaiming_uniform_init(np.random.default_rng(s), 64, 64).ravel() for s in range(10)]
        )
        assert abs(samples.var() - 2 / 64) / (2 / 64) < 0.3

    def test_init_deterministic_per_seed(self):
        a = init_weight("orthogonal", np.random.default_rng(5), 8, 8)
        b = init_weight("orthogonal", np.random.default_rng(5), 8, 8)
        assert np.array_equal(a, b)

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError, match="unknown init scheme"):
            init_weight("xavier", np.random.default_rng(0), 4, 4)

    def test_unknown_operator(self):
        with pytest.raises(ConfigError, match="unknown operator"):
            OperatorKind("transformer")

    def test_param_sizes(self):
        # closed-form parameter counts per family at width d
        d = HID
        expect = {
            "mlp": d * d,
            "gcn": d * d,
            "gat": d * d + 2 * d,
            "gat_linear": d * d + d,
            "gat_cos": d * d,
            "gin": 2 * d * d + 1,
            "sage_mean": 2 * d * d,
            "sage_max": 2 * d * d,
            "cheb": 3 * d * d,
            "geniepath": 2 * d * d + 2 * d,
        }
        for tag, size in expect.items():
            assert params_for(tag).size() == size, tag
