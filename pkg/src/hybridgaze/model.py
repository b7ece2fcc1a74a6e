"""Dual-branch gaze network and its joint training objective.

One shared eye encoder embeds sharp source eyes and degraded target eye
crops alike; a landmark-trained pose encoder (frozen during main training)
supplies head-pose features; the fusion stage is either the sparse graph
layer or a plain concatenation, followed by a two-layer head that regresses
pitch and yaw. The joint objective adds the source-side monocular regression
loss and the subspace-alignment loss on top of the face loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph_fusion
from .alignment import AlignmentReport, UdaConfig, uda_loss
from .autodiff import Tensor, concat, mse
from .errors import NumericalError

EYE_PIXELS = 256      # 16 x 16 grayscale
FACE_PIXELS = 1024    # 32 x 32 grayscale
N_LANDMARKS = 5


@dataclass
class ModelConfig:
    eye_dim: int = 32         # shared eye feature width
    pose_dim: int = 32        # pose feature width (penultimate layer)
    eye_hidden: int = 128
    pose_hidden: int = 64

    def __post_init__(self):
        if min(self.eye_dim, self.pose_dim, self.eye_hidden,
               self.pose_hidden) < 2:
            raise ValueError("widths must be at least 2")


@dataclass
class VariantFlags:
    """Which of the three optional mechanisms a training run uses."""

    use_alignment: bool = True        # source branch + alignment loss
    use_pretrained_pose: bool = True  # frozen landmark-trained pose encoder
    use_graph_fusion: bool = True     # sparse graph fusion vs concatenation

    def label(self):
        if not any((self.use_alignment, self.use_pretrained_pose,
                    self.use_graph_fusion)):
            return "baseline"
        parts = [name for flag, name in
                 ((self.use_alignment, "uda"),
                  (self.use_pretrained_pose, "pose"),
                  (self.use_graph_fusion, "sgf")) if flag]
        return "full" if len(parts) == 3 else "+".join(parts)


class ParamSet:
    """Named parameter tensors with a frozen subset the optimizer skips."""

    def __init__(self, tensors, frozen=()):
        self.tensors = dict(tensors)
        self.frozen = set(frozen)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, tensor):
        self.tensors[name] = tensor

    def __contains__(self, name):
        return name in self.tensors

    def trainable(self):
        return {name: t for name, t in self.tensors.items()
                if name not in self.frozen}

    def trainable_count(self):
        return sum(t.value.size for t in self.trainable().values())

    def arrays(self):
        return {name: t.value.copy() for name, t in self.tensors.items()}

    def load_arrays(self, arrays):
        for name, value in arrays.items():
            if name not in self.tensors:
                raise ValueError(f"unknown parameter block {name!r}")
            if self.tensors[name].value.shape != value.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: "
                    f"{self.tensors[name].value.shape} vs {value.shape}")
            self.tensors[name].value = value.astype(float).copy()

    def subset(self, prefix):
        return {name: t for name, t in self.tensors.items()
                if name.startswith(prefix)}


def _affine_init(rng, fan_in, fan_out):
    return Tensor(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))


def _pose_block(rng, cfg):
    return {
        "pose.w1": _affine_init(rng, FACE_PIXELS, cfg.pose_hidden),
        "pose.b1": Tensor(np.zeros((1, cfg.pose_hidden))),
        "pose.w2": _affine_init(rng, cfg.pose_hidden, cfg.pose_dim),
        "pose.b2": Tensor(np.zeros((1, cfg.pose_dim))),
        "pose.w3": _affine_init(rng, cfg.pose_dim, 2 * N_LANDMARKS),
        "pose.b3": Tensor(np.zeros((1, 2 * N_LANDMARKS))),
    }


def init_pose_params(seed, cfg=None):
    """Stand-alone landmark network, all blocks trainable."""
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9e3779]))
    return ParamSet(_pose_block(rng, cfg))


def init_params(seed, cfg=None, sgf_cfg=None, flags=None):
    """Fresh parameters for one training variant.

    The fusion stage decides the head input width: the graph readout size
    when graph fusion is on, otherwise the concatenated feature width.
    """
    cfg = cfg or ModelConfig()
    sgf_cfg = sgf_cfg or graph_fusion.SgfConfig()
    flags = flags or VariantFlags()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51f15e]))
    tensors = {
        "eye.w1": _affine_init(rng, EYE_PIXELS, cfg.eye_hidden),
        "eye.b1": Tensor(np.zeros((1, cfg.eye_hidden))),
        "eye.w2": _affine_init(rng, cfg.eye_hidden, cfg.eye_dim),
        "eye.b2": Tensor(np.zeros((1, cfg.eye_dim))),
        "reg.w": _affine_init(rng, cfg.eye_dim, 2),
        "reg.b": Tensor(np.zeros((1, 2))),
    }
    tensors.update(_pose_block(rng, cfg))
    gaze_dim = 2 * cfg.eye_dim
    if flags.use_graph_fusion:
        sgf = graph_fusion.init_sgf_params(rng, gaze_dim, cfg.pose_dim, sgf_cfg)
        tensors.update({f"sgf.{k}": t for k, t in sgf.items()})
        head_in = sgf_cfg.out_dim
    else:
        head_in = gaze_dim + cfg.pose_dim
    tensors["head.w1"] = _affine_init(rng, head_in, sgf_cfg.out_dim)
    tensors["head.b1"] = Tensor(np.zeros((1, sgf_cfg.out_dim)))
    tensors["head.w2"] = _affine_init(rng, sgf_cfg.out_dim, 2)
    tensors["head.b2"] = Tensor(np.zeros((1, 2)))
    frozen = {name for name in tensors if name.startswith("pose.")} \
        if flags.use_pretrained_pose else set()
    return ParamSet(tensors, frozen)


def _check_images(images, pixels, name):
    images = np.asarray(images, dtype=float)
    if images.ndim != 2 or images.shape[1] != pixels:
        raise ValueError(f"{name} must be (batch, {pixels}), got "
                         f"{images.shape}")
    return images


def encode_eye(images, params):
    """Shared eye encoder on a (batch, 256) tensor of flattened eye images."""
    x = images if isinstance(images, Tensor) \
        else Tensor(_check_images(images, EYE_PIXELS, "eye images"))
    if x.value.shape[1] != EYE_PIXELS:
        raise ValueError(f"eye images must have {EYE_PIXELS} pixels")
    hidden = (x @ params["eye.w1"] + params["eye.b1"]).relu()
    return hidden @ params["eye.w2"] + params["eye.b2"]


def encode_pose(images, params):
    """Pose features: penultimate activations of the landmark network."""
    x = images if isinstance(images, Tensor) \
        else Tensor(_check_images(images, FACE_PIXELS, "face images"))
    if x.value.shape[1] != FACE_PIXELS:
        raise ValueError(f"face images must have {FACE_PIXELS} pixels")
    hidden = (x @ params["pose.w1"] + params["pose.b1"]).relu()
    return (hidden @ params["pose.w2"] + params["pose.b2"]).relu()


def pose_landmarks(images, params):
    """Landmark coordinates (normalized to [0, 1]) from face images."""
    return encode_pose(images, params) @ params["pose.w3"] + params["pose.b3"]


def monocular_regress(features, params):
    """Shared linear pitch-yaw readout for single-eye features."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    return x @ params["reg.w"] + params["reg.b"]


def _fuse(z_left, z_right, z_pose, params, sgf_cfg, flags):
    batch = z_left.value.shape[0]
    if not flags.use_graph_fusion:
        return concat([z_left, z_right, z_pose], axis=1), []
    sgf_params = {name[len("sgf."):]: t for name, t in
                  params.subset("sgf.").items()}
    gaze_rows = concat([z_left, z_right], axis=1)
    fused_rows, adjacencies = [], []
    for i in range(batch):
        fused, adjacency = graph_fusion.sgf_forward(
            gaze_rows.gather_rows([i]), z_pose.gather_rows([i]),
            sgf_params, sgf_cfg)
        fused_rows.append(fused)
        adjacencies.append(adjacency)
    return concat(fused_rows, axis=0), adjacencies


@dataclass
class FaceForward:
    """Everything the training step needs from one target-batch pass."""

    prediction: Tensor        # (batch, 2) pitch-yaw
    z_left: Tensor
    z_right: Tensor
    z_pose: Tensor
    fused: Tensor
    adjacencies: list


def forward_face(batch, params, sgf_cfg=None, flags=None):
    """Full target-domain pass: eyes + pose -> fusion -> pitch-yaw head."""
    sgf_cfg = sgf_cfg or graph_fusion.SgfConfig()
    flags = flags or VariantFlags()
    for key in ("left", "right", "face"):
        if key not in batch:
            raise ValueError(f"target batch is missing {key!r} images")
    z_left = encode_eye(batch["left"], params)
    z_right = encode_eye(batch["right"], params)
    z_pose = encode_pose(batch["face"], params)
    fused, adjacencies = _fuse(z_left, z_right, z_pose, params, sgf_cfg, flags)
    hidden = (fused @ params["head.w1"] + params["head.b1"]).relu()
    prediction = hidden @ params["head.w2"] + params["head.b2"]
    return FaceForward(prediction=prediction, z_left=z_left, z_right=z_right,
                       z_pose=z_pose, fused=fused, adjacencies=adjacencies)


def interleave_eye_rows(z_left, z_right):
    """Row-parity mix of the two eyes: even rows left, odd rows right."""
    batch = z_left.value.shape[0]
    stacked = concat([z_left, z_right], axis=0)
    indices = [i if i % 2 == 0 else batch + i for i in range(batch)]
    return stacked.gather_rows(indices)


@dataclass
class JointLossReport:
    face_mse: Tensor
    eye_mse: Tensor
    alignment: AlignmentReport
    total: Tensor

    @property
    def face_value(self):
        return float(self.face_mse.value)

    @property
    def eye_value(self):
        return float(self.eye_mse.value)

    @property
    def total_value(self):
        return float(self.total.value)


def total_loss(source_batch, target_batch, params, uda_cfg=None, sgf_cfg=None,
               flags=None, both_eyes=False):
    """Joint objective: face MSE + source eye MSE + weighted alignment loss.

    The alignment term compares source eye features against the target eye
    features; by default target rows alternate left/right eyes so both
    batches keep the same row count, ``both_eyes`` instead stacks both target
    eyes and duplicates the source batch.
    """
    uda_cfg = uda_cfg or UdaConfig()
    b_src = np.asarray(source_batch["left"]).shape[0]
    b_tgt = np.asarray(target_batch["left"]).shape[0]
    if b_src != b_tgt:
        raise ValueError(f"source and target batch sizes differ "
                         f"({b_src} vs {b_tgt})")
    face = forward_face(target_batch, params, sgf_cfg, flags)
    face_term = mse(face.prediction, Tensor(target_batch["face_gaze"]))

    z_source = encode_eye(source_batch["left"], params)
    eye_term = mse(monocular_regress(z_source, params),
                   Tensor(source_batch["eye_gaze"]))

    if both_eyes:
        z_target = concat([face.z_left, face.z_right], axis=0)
        z_source_cmp = concat([z_source, z_source], axis=0)
    else:
        z_target = interleave_eye_rows(face.z_left, face.z_right)
        z_source_cmp = z_source
    alignment = uda_loss(z_source_cmp, z_target, uda_cfg)

    total = face_term + eye_term + uda_cfg.lambda_weight * alignment.total
    return JointLossReport(face_mse=face_term, eye_mse=eye_term,
                           alignment=alignment, total=total), face


def sgd_step(params, lr):
    """Vanilla SGD over the trainable blocks; frozen blocks stay untouched."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    updates = {}
    for name, tensor in params.trainable().items():
        if tensor.grad is None:
            continue
        if not np.all(np.isfinite(tensor.grad)):
            raise NumericalError(f"non-finite gradient in block {name!r}")
        updates[name] = tensor.grad
    for name, grad in updates.items():
        params[name].value = params[name].value - lr * grad
