import math

import numpy as np
import pytest
from scipy import sparse

from openstreets.roadnet import DualGraph
from openstreets.neural import (
    Adam,
    GatedRecurrentGraphCell,
    GraphConvLayer,
    GraphQNetwork,
    Linear,
    RecurrentGraphModel,
    Tensor,
    completeness_gap,
    evaluate_scalar,
    gradient_check,
    integrated_gradients,
    param,
    spmm,
    tensor,
    weighted_bce,
)


def make_dual(adj: np.ndarray) -> DualGraph:
    n = adj.shape[0]
    order = tuple(range(n))
    neighbors = {
        v: tuple((u, float(adj[v, u])) for u in range(n) if adj[v, u] != 0.0)
        for v in range(n)
    }
    return DualGraph(order=order, index={v: v for v in order},
                     neighbors=neighbors, matrix=sparse.csr_matrix(adj))


def pair_dual() -> DualGraph:
    return make_dual(np.array([[0.0, 1.0], [1.0, 0.0]]))


def random_dual(rng, n, connected=False) -> DualGraph:
    adj = np.zeros((n, n))
    if connected:
        # ring baseline so no vertex is isolated (isolated vertices pin relu
        # preactivations to exactly zero, where finite differences are invalid)
        for u in range(n):
            v = (u + 1) % n
            adj[u, v] = adj[v, u] = rng.uniform(0.2, 1.0)
    for u in range(n):
        for v in range(u + 1, n):
            if adj[u, v] == 0.0 and rng.random() < 0.6:
                adj[u, v] = adj[v, u] = rng.uniform(0.2, 1.0)
    return make_dual(adj)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestGraphConv:
    def test_identity_theta_copies_neighbor(self):
        g = pair_dual()
        layer = GraphConvLayer(3, 3, "identity")
        layer.theta.data = np.eye(3)
        x = tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        out = layer.forward(x, g)
        assert out.data[0] == pytest.approx([4.0, 5.0, 6.0])
        assert out.data[1] == pytest.approx([1.0, 2.0, 3.0])

    def test_isolated_vertex_zero_row_with_relu(self):
        g = make_dual(np.array([[0.0, 0.0], [0.0, 0.0]]))
        rng = np.random.default_rng(0)
        layer = GraphConvLayer(3, 2, "relu", rng)
        x = tensor(rng.normal(size=(2, 3)))
        out = layer.forward(x, g)
        assert np.all(out.data == 0.0)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(1)
        g = random_dual(rng, 5)
        layer = GraphConvLayer(3, 2, "sigmoid", rng)
        x = rng.normal(size=(5, 3))
        out = layer.forward(tensor(x), g)
        dense = sigmoid(g.matrix.toarray() @ x @ layer.theta.data.T + layer.bias.data)
        assert out.data == pytest.approx(dense)

    def test_linear_in_input_before_activation(self):
        rng = np.random.default_rng(2)
        g = random_dual(rng, 6)
        layer = GraphConvLayer(4, 3, "identity", rng)
        x1 = rng.normal(size=(6, 4))
        x2 = rng.normal(size=(6, 4))
        a, b = 1.7, -0.4
        combined = layer.forward(tensor(a * x1 + b * x2), g).data
        separate = (
            a * layer.forward(tensor(x1), g).data
            + b * layer.forward(tensor(x2), g).data
            - (a + b - 1) * layer.bias.data
        )
        assert np.max(np.abs(combined - separate)) < 1e-10

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        n = 7
        g = random_dual(rng, n)
        layer = GraphConvLayer(3, 3, "tanh", rng)
        x = rng.normal(size=(n, 3))
        perm = rng.permutation(n)
        adj_p = g.matrix.toarray()[np.ix_(perm, perm)]
        g_p = make_dual(adj_p)
        out = layer.forward(tensor(x), g).data
        out_p = layer.forward(tensor(x[perm]), g_p).data
        assert out_p == pytest.approx(out[perm])

    def test_dimension_mismatch(self):
        layer = GraphConvLayer(3, 2)
        with pytest.raises(ValueError):
            layer.forward(tensor(np.zeros((2, 4))), pair_dual())


class TestRecurrentCell:
    def test_zero_parameters_zero_hidden(self):
        g = pair_dual()
        cell = GatedRecurrentGraphCell(2, 2)
        for p in cell.parameters():
            p.data = np.zeros_like(p.data)
        x = tensor(np.ones((2, 2)))
        h = tensor(np.zeros((2, 2)))
        out = cell.step(x, h, g)
        # z = sigmoid(0) = 0.5, c = tanh(0) = 0 -> h' = 0
        assert np.all(out.data == 0.0)

    def test_large_update_bias_carries_hidden_through(self):
        g = pair_dual()
        rng = np.random.default_rng(4)
        cell = GatedRecurrentGraphCell(2, 2, rng)
        cell.conv_zx.bias.data = np.full(2, 50.0)  # force z ~ 1
        x = tensor(rng.normal(size=(2, 2)))
        h_prev = rng.normal(size=(2, 2))
        out = cell.step(x, tensor(h_prev), g)
        assert out.data == pytest.approx(h_prev, abs=1e-9)

    def test_matches_scalar_recomputation(self):
        rng = np.random.default_rng(5)
        n, d, hd = 3, 2, 2
        g = random_dual(rng, n)
        adj = g.matrix.toarray()
        cell = GatedRecurrentGraphCell(d, hd, rng)
        x = rng.normal(size=(n, d))
        h = rng.normal(size=(n, hd))

        def conv(layer, inp):
            out = np.zeros((n, layer.out_dim))
            for v in range(n):
                agg = np.zeros(inp.shape[1])
                for u in range(n):
                    agg += adj[v, u] * inp[u]
                out[v] = layer.theta.data @ agg + layer.bias.data
            return out

        z = sigmoid(conv(cell.conv_zx, x) + conv(cell.conv_zh, h))
        r = sigmoid(conv(cell.conv_rx, x) + conv(cell.conv_rh, h))
        c = np.tanh(conv(cell.conv_cx, x) + conv(cell.conv_ch, r * h))
        expected = z * h + (1 - z) * c
        out = cell.step(tensor(x), tensor(h), g)
        assert out.data == pytest.approx(expected)


class TestWeightedBce:
    def test_single_positive_at_half(self):
        loss = weighted_bce(tensor(np.array([0.5])), np.array([1.0]))
        assert float(loss.data) == pytest.approx(math.log(2), abs=1e-9)

    def test_perfect_predictions_near_zero(self):
        probs = tensor(np.array([1.0, 0.0]))
        loss = weighted_bce(probs, np.array([1.0, 0.0]))
        assert float(loss.data) <= 1e-6

    def test_imbalance_weight_balances_classes(self):
        # positive share 0.76% -> pos_weight (1 - 0.0076) / 0.0076
        pos_weight = (1 - 0.0076) / 0.0076
        assert pos_weight == pytest.approx(130.6, abs=0.1)
        probs = np.full(131, 0.5)
        labels = np.zeros(131)
        labels[0] = 1.0
        pos_term = pos_weight * 1 * math.log(2)
        neg_term = 130 * math.log(2)
        assert pos_term == pytest.approx(neg_term, rel=0.01)
        loss = weighted_bce(tensor(probs), labels, pos_weight)
        assert float(loss.data) == pytest.approx((pos_term + neg_term) / 131)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            weighted_bce(tensor(np.array([0.5])), np.array([1.0, 0.0]))


def relu_margin_q(model, x, g):
    """Smallest |preactivation| across relu layers; finite differences are only
    trustworthy when test points sit away from the kink."""
    adj = g.matrix.toarray()
    h = x
    margin = np.inf
    for layer in model.convs:
        z = adj @ h @ layer.theta.data.T + layer.bias.data
        margin = min(margin, float(np.min(np.abs(z))))
        h = np.maximum(z, 0.0)
    return margin


def relu_margin_rgnn(model, xs, g):
    adj = g.matrix.toarray()
    margin = np.inf
    for x in xs:
        h = x
        for layer in model.encoder:
            z = adj @ h @ layer.theta.data.T + layer.bias.data
            margin = min(margin, float(np.min(np.abs(z))))
            h = np.maximum(z, 0.0)
    return margin


def sample_away_from_kinks(rng, draw, margin_fn, threshold=1e-3, attempts=200):
    for _ in range(attempts):
        sample = draw(rng)
        if margin_fn(sample) > threshold:
            return sample
    raise AssertionError("could not find a differentiable test point")


class TestBackward:
    def test_half_norm_squared_gradient_is_input(self):
        x = param(np.array([1.0, -2.0, 3.0]))
        loss = (x * x).sum() * 0.5
        loss.backward()
        assert x.grad == pytest.approx(x.data)

    def test_bce_logit_gradient(self):
        logit = param(np.array([0.0]))
        loss = weighted_bce(logit.sigmoid(), np.array([1.0]))
        loss.backward()
        assert logit.grad == pytest.approx([-0.5])

    @pytest.mark.parametrize("seed", range(10))
    def test_recurrent_model_gradients(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 4, 3
        g = random_dual(rng, n, connected=True)
        model = RecurrentGraphModel(in_features=d, hidden_dim=3, conv_layers=2, seed=seed)
        xs = sample_away_from_kinks(
            rng,
            lambda r: [r.normal(size=(n, d)) for _ in range(2)],
            lambda xs: relu_margin_rgnn(model, xs, g),
        )
        labels = rng.integers(0, 2, size=n).astype(float)

        def build():
            probs = model.forward_probs([tensor(x) for x in xs], g)
            return weighted_bce(probs, labels, pos_weight=2.0)

        err = gradient_check(build, model.parameters(), h=1e-4)
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_q_network_gradients(self, seed):
        rng = np.random.default_rng(seed + 100)
        n, d = 4, 3
        g = random_dual(rng, n, connected=True)
        model = GraphQNetwork(in_features=d, hidden_dim=3, conv_layers=2, seed=seed)
        x = sample_away_from_kinks(
            rng,
            lambda r: r.normal(size=(n, d)),
            lambda x: relu_margin_q(model, x, g),
        )
        target = rng.normal(size=n)

        def build():
            q = model.forward(tensor(x), g)
            return (q - Tensor(target)).square().mean()

        err = gradient_check(build, model.parameters(), h=1e-4)
        assert err < 1e-4

    def test_input_gradients_flow(self):
        rng = np.random.default_rng(42)
        g = random_dual(rng, 4, connected=True)
        model = GraphQNetwork(in_features=3, hidden_dim=4, conv_layers=1, seed=0)
        x = param(rng.normal(size=(4, 3)))

        def build():
            return model.forward(x, g).sum()

        err = gradient_check(build, [x], h=1e-4)
        assert err < 1e-4


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = param(np.array([1.0, 2.0]))
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        before = p.data.copy()
        opt.step()
        assert p.data == pytest.approx(before)

    def test_constant_gradient_step_approaches_lr(self):
        p = param(np.array([0.0]))
        opt = Adam([p], lr=0.05)
        for _ in range(500):
            p.grad = np.array([3.0])
            prev = p.data.copy()
            opt.step()
        assert abs(prev[0] - p.data[0]) == pytest.approx(0.05, rel=1e-3)

    def test_converges_on_convex_quadratic(self):
        target = np.array([1.5, -2.0, 0.25])
        p = param(np.zeros(3))
        opt = Adam([p], lr=0.1)
        loss_val = None
        for _ in range(200):
            opt.zero_grad()
            loss = ((p - Tensor(target)) * (p - Tensor(target))).sum()
            loss.backward()
            opt.step()
            loss_val = float(loss.data)
        assert loss_val < 1e-3


class TestIntegratedGradients:
    def test_linear_model_closed_form(self):
        w = np.array([0.5, -1.0, 2.0])
        x = np.array([1.0, 2.0, 3.0])
        x0 = np.array([0.5, 0.0, -1.0])

        def f(leafs):
            return (leafs[0] * Tensor(w)).sum()

        attrs = integrated_gradients(f, [x], [x0], steps=16)
        assert attrs[0] == pytest.approx(w * (x - x0), abs=1e-12)

    def test_identical_input_and_baseline(self):
        x = np.array([1.0, 2.0])

        def f(leafs):
            return (leafs[0] * leafs[0]).sum()

        attrs = integrated_gradients(f, [x], [x.copy()], steps=16)
        assert np.all(attrs[0] == 0.0)

    def test_completeness_on_two_layer_model(self):
        rng = np.random.default_rng(7)
        n, d = 4, 3
        g = random_dual(rng, n)
        model = GraphQNetwork(in_features=d, hidden_dim=4, conv_layers=2, seed=3)
        x = rng.normal(size=(n, d))
        x0 = np.zeros_like(x)

        def f(leafs):
            return model.forward(leafs[0], g).sigmoid().sum()

        attrs = integrated_gradients(f, [x], [x0], steps=256)
        gap, delta = completeness_gap(f, [x], [x0], attrs)
        assert abs(gap) < 0.01 * abs(delta)

    def test_minimum_steps_enforced(self):
        with pytest.raises(ValueError):
            integrated_gradients(lambda leafs: leafs[0].sum(), [np.ones(2)], [np.zeros(2)], steps=8)


class TestSpmmAndOps:
    def test_spmm_batched_matches_loop(self):
        rng = np.random.default_rng(8)
        adj = sparse.csr_matrix(rng.random((5, 5)) * (rng.random((5, 5)) < 0.5))
        x = rng.normal(size=(3, 5, 2))
        out = spmm(adj, tensor(x))
        for b in range(3):
            assert out.data[b] == pytest.approx(adj.toarray() @ x[b])

    def test_gather_rows(self):
        x = param(np.arange(12, dtype=float).reshape(3, 4))
        idx = np.array([1, 0, 3])
        out = x.gather_rows(idx)
        assert out.data == pytest.approx([1.0, 4.0, 11.0])
        out.sum().backward()
        expected = np.zeros((3, 4))
        expected[0, 1] = expected[1, 0] = expected[2, 3] = 1.0
        assert x.grad == pytest.approx(expected)
