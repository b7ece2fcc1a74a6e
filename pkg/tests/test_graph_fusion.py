import numpy as np
import pytest

from hybridgaze.autodiff import Tensor, grad_check
from hybridgaze.graph_fusion import (NodeGraph, SgfConfig, build_graph,
                                     init_sgf_params, node_similarity,
                                     sgf_forward, topk_adjacency)


def make_params(seed, gaze_dim, pose_dim, cfg):
    return init_sgf_params(np.random.default_rng(seed), gaze_dim, pose_dim, cfg)


def identity_sim_params(params):
    """Make the similarity MLP reduce to S = relu(gaze - pose)."""
    params["sim_w1"].value = np.ones((1, 1))
    params["sim_b1"].value = np.zeros((1, 1))
    params["sim_w2"].value = np.ones((1, 1))
    params["sim_b2"].value = np.zeros((1, 1))


class TestNodeSimilarity:
    def test_equal_nodes_give_constant_scores(self):
        cfg = SgfConfig(out_dim=4)
        params = make_params(0, 6, 3, cfg)
        scores = node_similarity(np.full(6, 0.7), np.full(3, 0.7), params)
        assert np.allclose(scores, scores[0, 0])

    def test_identity_mlp_is_relu_of_difference(self):
        cfg = SgfConfig(hidden=1, out_dim=4)
        params = make_params(1, 4, 3, cfg)
        identity_sim_params(params)
        gaze = np.array([0.5, -1.0, 2.0, 0.0])
        pose = np.array([0.0, 1.0, -0.5])
        scores = node_similarity(gaze, pose, params)
        expected = np.maximum(gaze[:, None] - pose[None, :], 0.0)
        assert np.allclose(scores, expected)

    def test_matches_loop_reimplementation(self):
        cfg = SgfConfig(out_dim=4)
        params = make_params(2, 4, 3, cfg)
        rng = np.random.default_rng(3)
        gaze, pose = rng.standard_normal(4), rng.standard_normal(3)
        scores = node_similarity(gaze, pose, params)
        w1 = params["sim_w1"].value
        b1 = params["sim_b1"].value
        w2 = params["sim_w2"].value
        b2 = params["sim_b2"].value
        for i in range(4):
            for j in range(3):
                hidden = np.maximum((gaze[i] - pose[j]) * w1 + b1, 0.0)
                assert scores[i, j] == pytest.approx(
                    (hidden @ w2 + b2).item(), abs=1e-12)

    def test_rejects_nonfinite(self):
        cfg = SgfConfig(out_dim=2)
        params = make_params(4, 2, 2, cfg)
        with pytest.raises(ValueError):
            node_similarity(np.array([np.inf, 0.0]), np.zeros(2), params)


class TestTopkAdjacency:
    def test_unique_max(self):
        adj = topk_adjacency(np.array([[0.1, 0.9, 0.5]]), 1)
        assert adj.tolist() == [[False, True, False]]

    def test_tie_breaks_toward_lower_index(self):
        adj = topk_adjacency(np.array([[0.7, 0.7, 0.1]]), 1)
        assert adj.tolist() == [[True, False, False]]

    def test_full_k_is_dense(self):
        rng = np.random.default_rng(5)
        adj = topk_adjacency(rng.standard_normal((4, 3)), 3)
        assert adj.all()

    def test_rejects_out_of_range_k(self):
        with pytest.raises(ValueError):
            topk_adjacency(np.ones((2, 3)), 0)
        with pytest.raises(ValueError):
            topk_adjacency(np.ones((2, 3)), 4)

    @pytest.mark.parametrize("seed", range(20))
    def test_rows_sum_to_k(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 5))
        scores = rng.standard_normal((8, 5))
        assert np.all(topk_adjacency(scores, k).sum(axis=1) == k)


class TestSgfForward:
    def test_pass_through_configuration(self):
        cfg = SgfConfig(layers=1, out_dim=6)
        params = make_params(6, 6, 3, cfg)
        params["w_nbr_0"].value = np.zeros((1, 1))
        params["read_w"].value = np.eye(6)
        params["read_b"].value = np.zeros((1, 6))
        gaze = np.arange(6.0)
        fused, _ = sgf_forward(gaze, np.ones(3), params, cfg)
        assert np.allclose(fused.value.ravel(), gaze)

    def test_neighbour_copy_configuration(self):
        # w_self = 0, w_nbr = 1, k = 1: each gaze node becomes its selected
        # pose neighbour's value
        cfg = SgfConfig(layers=1, hidden=1, neighbors=1, out_dim=3)
        params = make_params(7, 3, 2, cfg)
        identity_sim_params(params)
        params["w_self_0"].value = np.zeros((1, 1))
        params["b_self_0"].value = np.zeros((1, 1))
        params["w_nbr_0"].value = np.ones((1, 1))
        params["read_w"].value = np.eye(3)
        params["read_b"].value = np.zeros((1, 3))
        gaze = np.array([0.0, 2.0, 5.0])
        pose = np.array([1.0, 4.0])
        # relu(gaze_i - pose_j) is maximised by the smaller pose value unless
        # both differences are non-positive, where ties pick column 0
        fused, adjacency = sgf_forward(gaze, pose, params, cfg)
        expected = pose[np.argmax(np.maximum(gaze[:, None] - pose[None, :], 0.0),
                                  axis=1)]
        assert np.allclose(fused.value.ravel(), expected)
        assert np.all(adjacency.sum(axis=1) == 1)

    def test_matches_loop_reimplementation(self):
        cfg = SgfConfig(layers=2, neighbors=2, out_dim=5)
        params = make_params(8, 8, 3, cfg)
        rng = np.random.default_rng(9)
        gaze = rng.standard_normal(8)
        pose = rng.standard_normal(3)
        fused, adjacency = sgf_forward(gaze, pose, params, cfg)

        g, p = gaze.copy(), pose.copy()
        for layer in range(cfg.layers):
            w_self = params[f"w_self_{layer}"].value.item()
            b_self = params[f"b_self_{layer}"].value.item()
            w_nbr = params[f"w_nbr_{layer}"].value.item()
            new_g = np.empty_like(g)
            for i in range(8):
                nbr = sum(p[j] for j in range(3) if adjacency[i, j])
                new_g[i] = w_self * g[i] + b_self + w_nbr * nbr
            g = new_g
            p = params[f"w_pose_{layer}"].value.item() * p \
                + params[f"b_pose_{layer}"].value.item()
        expected = g @ params["read_w"].value + params["read_b"].value
        assert np.allclose(fused.value, expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_pose_permutation_consistency(self, seed):
        cfg = SgfConfig(layers=3, neighbors=2, out_dim=4)
        params = make_params(20 + seed, 6, 5, cfg)
        rng = np.random.default_rng(seed)
        gaze = rng.standard_normal(6)
        pose = rng.standard_normal(5)
        adjacency = topk_adjacency(node_similarity(gaze, pose, params), 2)
        fused, _ = sgf_forward(gaze, pose, params, cfg, adjacency=adjacency)
        perm = rng.permutation(5)
        fused_perm, _ = sgf_forward(gaze, pose[perm], params, cfg,
                                    adjacency=adjacency[:, perm])
        assert np.max(np.abs(fused.value - fused_perm.value)) < 1e-12

    def test_pose_independence_with_zero_neighbour_weights(self):
        cfg = SgfConfig(layers=2, out_dim=4)
        params = make_params(11, 4, 3, cfg)
        for layer in range(cfg.layers):
            params[f"w_nbr_{layer}"].value = np.zeros((1, 1))
        rng = np.random.default_rng(12)
        gaze = rng.standard_normal(4)
        out_a, _ = sgf_forward(gaze, rng.standard_normal(3), params, cfg)
        out_b, _ = sgf_forward(gaze, rng.standard_normal(3), params, cfg)
        assert np.array_equal(out_a.value, out_b.value)

    def test_gradients_match_finite_differences(self):
        cfg = SgfConfig(layers=2, neighbors=2, out_dim=3)
        params = make_params(13, 8, 6, cfg)
        rng = np.random.default_rng(14)
        gaze = rng.standard_normal(8)
        pose = rng.standard_normal(6)
        adjacency = topk_adjacency(node_similarity(gaze, pose, params),
                                   cfg.neighbors)
        target = rng.standard_normal((1, 3))

        def loss_for_gaze(t):
            fused, _ = sgf_forward(t, Tensor(pose.reshape(1, -1)), params,
                                   cfg, adjacency=adjacency)
            return (fused - target).square().sum()

        assert grad_check(loss_for_gaze, gaze.reshape(1, -1)) < 1e-4

        def loss_for_param(name):
            original = params[name].value.copy()

            def f(t):
                params[name] = t
                fused, _ = sgf_forward(Tensor(gaze.reshape(1, -1)),
                                       Tensor(pose.reshape(1, -1)), params,
                                       cfg, adjacency=adjacency)
                return (fused - target).square().sum()

            err = grad_check(f, original)
            params[name] = Tensor(original)
            return err

        for name in ("w_self_0", "w_nbr_1", "w_pose_0", "read_w", "read_b"):
            assert loss_for_param(name) < 1e-4, name

    def test_static_pose_nodes_flag(self):
        cfg = SgfConfig(layers=2, out_dim=3, static_pose_nodes=True)
        params = make_params(15, 4, 3, cfg)
        params["w_pose_0"].value = np.full((1, 1), 5.0)
        params["w_pose_1"].value = np.full((1, 1), 5.0)
        rng = np.random.default_rng(16)
        gaze, pose = rng.standard_normal(4), rng.standard_normal(3)
        frozen, _ = sgf_forward(gaze, pose, params, cfg)
        cfg_live = SgfConfig(layers=2, out_dim=3)
        live, _ = sgf_forward(gaze, pose, params, cfg_live)
        assert not np.allclose(frozen.value, live.value)

    def test_recompute_adjacency_flag_runs(self):
        cfg = SgfConfig(layers=3, out_dim=3, recompute_adjacency_per_layer=True)
        params = make_params(17, 4, 3, cfg)
        rng = np.random.default_rng(18)
        fused, adjacency = sgf_forward(rng.standard_normal(4),
                                       rng.standard_normal(3), params, cfg)
        assert fused.value.shape == (1, 3)
        assert adjacency.shape == (4, 3)

    def test_build_graph_container(self):
        cfg = SgfConfig(neighbors=2, out_dim=3)
        params = make_params(19, 4, 3, cfg)
        rng = np.random.default_rng(20)
        graph = build_graph(rng.standard_normal(4), rng.standard_normal(3),
                            params, cfg)
        assert isinstance(graph, NodeGraph)
        assert graph.adjacency.shape == (4, 3)
        assert np.all(graph.adjacency.sum(axis=1) == 2)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SgfConfig(neighbors=0)
        with pytest.raises(ValueError):
            SgfConfig(layers=0)
