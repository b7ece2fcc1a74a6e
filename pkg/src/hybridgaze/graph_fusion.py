"""Sparse graph fusion of per-dimension gaze and pose features.

Every dimension of the binocular gaze features and of the pose features is
a scalar node. A small MLP scores gaze-pose node pairs, each gaze node keeps
its top-k pose neighbours (hard selection, no gradient), and a few rounds of
message passing mix the selected pose values into the gaze nodes before an
affine readout produces the fused representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, masked_rows_sum


@dataclass
class SgfConfig:
    neighbors: int = 1      # pose neighbours per gaze node (top-k)
    layers: int = 4         # message passing rounds
    hidden: int = 8         # similarity MLP hidden width
    out_dim: int = 32       # fused representation size
    recompute_adjacency_per_layer: bool = False
    static_pose_nodes: bool = False

    def __post_init__(self):
        if self.neighbors < 1:
            raise ValueError("neighbors must be at least 1")
        if self.layers < 1 or self.hidden < 1 or self.out_dim < 1:
            raise ValueError("layers, hidden and out_dim must be positive")


@dataclass
class NodeGraph:
    """Scalar node values plus the selected gaze-to-pose adjacency."""

    gaze_nodes: np.ndarray   # shape (2 * eye_dim,)
    pose_nodes: np.ndarray   # shape (pose_dim,)
    adjacency: np.ndarray    # bool, shape (2 * eye_dim, pose_dim)


def init_sgf_params(rng, gaze_dim, pose_dim, cfg):
    """Fresh parameter tensors for one fusion stack.

    Per-layer update weights are scalars shared across nodes; ``w_self``
    starts at 1 and ``w_nbr`` small so early training is close to a
    pass-through of the gaze features.
    """
    h = cfg.hidden
    params = {
        "sim_w1": Tensor(rng.standard_normal((1, h))),
        "sim_b1": Tensor(rng.standard_normal((1, h)) * 0.1),
        "sim_w2": Tensor(rng.standard_normal((h, 1)) / np.sqrt(h)),
        "sim_b2": Tensor(np.zeros((1, 1))),
        "read_w": Tensor(rng.standard_normal((gaze_dim, cfg.out_dim))
                         / np.sqrt(gaze_dim)),
        "read_b": Tensor(np.zeros((1, cfg.out_dim))),
    }
    for layer in range(cfg.layers):
        params[f"w_self_{layer}"] = Tensor(np.ones((1, 1)))
        params[f"b_self_{layer}"] = Tensor(np.zeros((1, 1)))
        params[f"w_nbr_{layer}"] = Tensor(rng.standard_normal((1, 1)) * 0.1)
        params[f"w_pose_{layer}"] = Tensor(np.ones((1, 1)))
        params[f"b_pose_{layer}"] = Tensor(np.zeros((1, 1)))
    return params


def node_similarity(gaze_nodes, pose_nodes, params):
    """Pairwise similarity scores S[i, j] = mlp(gaze_i - pose_j).

    Value-level only: the scores feed the hard top-k selection, which blocks
    gradients anyway.
    """
    gaze_nodes = np.asarray(gaze_nodes, dtype=float).reshape(-1)
    pose_nodes = np.asarray(pose_nodes, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(gaze_nodes)) and np.all(np.isfinite(pose_nodes))):
        raise ValueError("node values must be finite")
    diff = (gaze_nodes[:, None] - pose_nodes[None, :]).reshape(-1, 1)
    hidden = diff @ params["sim_w1"].value + params["sim_b1"].value
    hidden = np.maximum(hidden, 0.0)
    scores = hidden @ params["sim_w2"].value + params["sim_b2"].value
    return scores.reshape(gaze_nodes.shape[0], pose_nodes.shape[0])


def topk_adjacency(scores, k):
    """Boolean adjacency keeping each row's k largest scores.

    Ties break toward the lower column index (stable sort on descending
    scores), so the selection is deterministic.
    """
    scores = np.asarray(scores, dtype=float)
    rows, cols = scores.shape
    if not 1 <= k <= cols:
        raise ValueError(f"k must be in [1, {cols}], got {k}")
    order = np.argsort(-scores, axis=1, kind="stable")
    adjacency = np.zeros((rows, cols), dtype=bool)
    np.put_along_axis(adjacency, order[:, :k], True, axis=1)
    return adjacency


def build_graph(gaze_values, pose_values, params, cfg):
    """Score node pairs and select the top-k adjacency."""
    scores = node_similarity(gaze_values, pose_values, params)
    adjacency = topk_adjacency(scores, cfg.neighbors)
    return NodeGraph(np.asarray(gaze_values, dtype=float).reshape(-1),
                     np.asarray(pose_values, dtype=float).reshape(-1),
                     adjacency)


def sgf_forward(gaze_nodes, pose_nodes, params, cfg, adjacency=None):
    """Fuse one sample's node values into an ``out_dim`` vector.

    ``gaze_nodes`` and ``pose_nodes`` are row tensors (or arrays, wrapped as
    leaves). The adjacency is built once from the input values unless one is
    passed in or per-layer recomputation is enabled. Returns
    (fused row tensor, adjacency actually used at the first layer).
    """
    gaze = as_tensor(gaze_nodes)
    pose = as_tensor(pose_nodes)
    if gaze.value.ndim == 1:
        gaze = gaze.reshape(1, -1)
    if pose.value.ndim == 1:
        pose = pose.reshape(1, -1)
    if adjacency is None:
        adjacency = topk_adjacency(
            node_similarity(gaze.value, pose.value, params), cfg.neighbors)
    first_adjacency = adjacency
    for layer in range(cfg.layers):
        if cfg.recompute_adjacency_per_layer and layer > 0:
            adjacency = topk_adjacency(
                node_similarity(gaze.value, pose.value, params), cfg.neighbors)
        neighbour_sum = pose @ Tensor(adjacency.T.astype(float))
        gaze = (gaze * params[f"w_self_{layer}"]
                + params[f"b_self_{layer}"]
                + neighbour_sum * params[f"w_nbr_{layer}"])
        if not cfg.static_pose_nodes:
            pose = pose * params[f"w_pose_{layer}"] + params[f"b_pose_{layer}"]
    fused = gaze @ params["read_w"] + params["read_b"]
    return fused, first_adjacency


def batch_node_similarity(gaze_values, pose_values, params):
    """Similarity scores for a whole batch: (batch, gaze_dim, pose_dim)."""
    gaze_values = np.asarray(gaze_values, dtype=float)
    pose_values = np.asarray(pose_values, dtype=float)
    if not (np.all(np.isfinite(gaze_values)) and np.all(np.isfinite(pose_values))):
        raise ValueError("node values must be finite")
    batch, gaze_dim = gaze_values.shape
    pose_dim = pose_values.shape[1]
    diff = (gaze_values[:, :, None] - pose_values[:, None, :]).reshape(-1, 1)
    hidden = np.maximum(diff @ params["sim_w1"].value
                        + params["sim_b1"].value, 0.0)
    scores = hidden @ params["sim_w2"].value + params["sim_b2"].value
    return scores.reshape(batch, gaze_dim, pose_dim)


def batch_topk_adjacency(scores, k):
    """Row-wise top-k over the last axis of a (batch, rows, cols) array."""
    cols = scores.shape[-1]
    if not 1 <= k <= cols:
        raise ValueError(f"k must be in [1, {cols}], got {k}")
    order = np.argsort(-scores, axis=-1, kind="stable")
    adjacency = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(adjacency, order[..., :k], True, axis=-1)
    return adjacency


def sgf_forward_batch(gaze_nodes, pose_nodes, params, cfg, adjacency=None):
    """Batched fusion: same recurrence as :func:`sgf_forward`, all samples
    at once.

    ``gaze_nodes`` and ``pose_nodes`` are (batch, dim) tensors; the returned
    adjacency is the (batch, gaze_dim, pose_dim) stack used at layer 0.
    """
    gaze = as_tensor(gaze_nodes)
    pose = as_tensor(pose_nodes)
    if adjacency is None:
        adjacency = batch_topk_adjacency(
            batch_node_similarity(gaze.value, pose.value, params),
            cfg.neighbors)
    first_adjacency = adjacency
    for layer in range(cfg.layers):
        if cfg.recompute_adjacency_per_layer and layer > 0:
            adjacency = batch_topk_adjacency(
                batch_node_similarity(gaze.value, pose.value, params),
                cfg.neighbors)
        gaze = (gaze * params[f"w_self_{layer}"]
                + params[f"b_self_{layer}"]
                + masked_rows_sum(pose, adjacency) * params[f"w_nbr_{layer}"])
        if not cfg.static_pose_nodes:
            pose = pose * params[f"w_pose_{layer}"] + params[f"b_pose_{layer}"]
    fused = gaze @ params["read_w"] + params["read_b"]
    return fused, first_adjacency
