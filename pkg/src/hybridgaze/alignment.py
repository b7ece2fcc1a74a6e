"""Subspace-alignment loss between two feature batches.

Source and target feature matrices are compared through the pseudo-inverses
of their Gram matrices: corresponding columns should point the same way
(angle term) and the leading Gram eigenvalues should match (scale term).
Both terms are recorded on the autodiff graph, so the loss is differentiable
with respect to both batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .autodiff import Tensor, as_tensor, l2norm, masked_reciprocal, sym_eig_tensors

COSINE_EPS = 1e-8


@dataclass
class UdaConfig:
    """Knobs for the alignment loss.

    ``energy_ratio`` picks how many leading eigenvalues count as the shared
    subspace; ``angle_over_all_n`` switches the angle term from the selected
    rank to every column (ablation setting).
    """

    energy_ratio: float = 0.999
    rel_tol: float = linalg.PINV_REL_TOL
    gap_floor: float = linalg.GAP_FLOOR
    lambda_weight: float = 0.5
    angle_over_all_n: bool = False

    def __post_init__(self):
        if not 0.0 < self.energy_ratio <= 1.0:
            raise ValueError("energy_ratio must be in (0, 1]")
        if self.rel_tol <= 0.0 or self.gap_floor <= 0.0:
            raise ValueError("rel_tol and gap_floor must be positive")
        if self.lambda_weight < 0.0:
            raise ValueError("lambda_weight must be non-negative")


@dataclass
class AlignmentReport:
    """Per-call diagnostics plus the loss tensors for backprop."""

    cosines: np.ndarray      # per-column cosine between the pseudo-inverses
    angle_loss: Tensor
    scale_loss: Tensor
    total: Tensor            # angle + scale
    rank: int                # shared subspace rank used by both terms

    @property
    def angle_value(self):
        return float(self.angle_loss.value)

    @property
    def scale_value(self):
        return float(self.scale_loss.value)

    @property
    def total_value(self):
        return float(self.total.value)


def _check_descending(lam, name):
    lam = np.asarray(lam, dtype=float)
    scale = max(abs(lam[0]), 1.0)
    if np.any(np.diff(lam) > 1e-12 * scale):
        raise ValueError(f"{name} eigenvalues must be sorted non-increasing")
    return lam


def effective_rank(lambda_source, lambda_target, rho):
    """Shared subspace rank from two descending eigenvalue vectors.

    Per domain: the smallest k whose leading eigenvalues carry a ``rho``
    fraction of the total energy. The shared rank is the minimum of the two;
    an all-zero spectrum counts as rank 1.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must be in (0, 1]")
    lam_s = _check_descending(lambda_source, "source")
    lam_t = _check_descending(lambda_target, "target")
    if lam_s.shape != lam_t.shape:
        raise ValueError("spectra must have equal length")

    def rank_of(lam):
        energy = np.cumsum(np.maximum(lam, 0.0))
        total = energy[-1]
        if total <= 0.0:
            return 1
        slack = 1e-15 * total
        return int(np.argmax(energy >= rho * total - slack)) + 1

    return min(rank_of(lam_s), rank_of(lam_t))


def column_cosines(a, b):
    """Cosine between corresponding columns, guarded near zero columns.

    Squared norms are floored at ``COSINE_EPS**2`` before the square root, so
    a pair of (near-)zero columns scores 0 and positive rescaling of either
    matrix leaves nonzero columns' cosines unchanged to round-off.
    """
    a, b = as_tensor(a), as_tensor(b)
    dots = (a * b).sum(axis=0)
    norm_a = a.square().sum(axis=0).clip_min(COSINE_EPS ** 2).sqrt()
    norm_b = b.square().sum(axis=0).clip_min(COSINE_EPS ** 2).sqrt()
    return dots / (norm_a * norm_b)


def angle_alignment(pinv_source, pinv_target, limit=None):
    """Angle term: sum of |1 - cosine| over the first ``limit`` columns.

    Returns (cosine tensor over all columns, loss tensor). ``limit=None``
    sums over every column.
    """
    cosines = column_cosines(pinv_source, pinv_target)
    summed = cosines if limit is None else cosines.gather_rows(np.arange(limit))
    return cosines, (1.0 - summed).abs().sum()


def scale_alignment(lambda_source, lambda_target, rank):
    """Scale term: Euclidean distance between the ``rank`` leading eigenvalues."""
    lam_s, lam_t = as_tensor(lambda_source), as_tensor(lambda_target)
    if rank < 1:
        raise ValueError("rank must be at least 1")
    if rank > lam_s.value.shape[0] or rank > lam_t.value.shape[0]:
        raise ValueError("rank exceeds spectrum length")
    idx = np.arange(rank)
    return l2norm(lam_s.gather_rows(idx) - lam_t.gather_rows(idx))


def _gram_spectrum_on_tape(features, cfg):
    g = features.T @ features
    g = (g + g.T) * 0.5
    lam, vecs, spectrum = sym_eig_tensors(g, gap_floor=cfg.gap_floor)
    if spectrum.eigenvalues[0] > 0.0:
        keep = spectrum.eigenvalues > cfg.rel_tol * spectrum.eigenvalues[0]
    else:
        keep = np.zeros_like(spectrum.eigenvalues, dtype=bool)
    pinv = (vecs * masked_reciprocal(lam, keep)) @ vecs.T
    return lam, pinv


def uda_loss(source_features, target_features, cfg=None):
    """Alignment loss between equally-shaped source and target batches.

    Accepts tensors already on a graph (the training path) or plain arrays
    (wrapped as leaves). The returned report carries the loss tensors, so
    ``report.total.backward()`` yields gradients for both inputs.
    """
    cfg = cfg or UdaConfig()
    src = as_tensor(source_features)
    tgt = as_tensor(target_features)
    if src.value.shape != tgt.value.shape:
        raise ValueError("source and target batches must have equal shape "
                         f"({src.value.shape} vs {tgt.value.shape})")
    linalg.check_matrix(src.value, "source batch")
    linalg.check_matrix(tgt.value, "target batch")

    lam_s, pinv_s = _gram_spectrum_on_tape(src, cfg)
    lam_t, pinv_t = _gram_spectrum_on_tape(tgt, cfg)

    rank = effective_rank(lam_s.value, lam_t.value, cfg.energy_ratio)
    limit = None if cfg.angle_over_all_n else rank
    cosines, angle = angle_alignment(pinv_s, pinv_t, limit=limit)
    scale = scale_alignment(lam_s, lam_t, rank)
    return AlignmentReport(cosines=cosines.value.copy(), angle_loss=angle,
                           scale_loss=scale, total=angle + scale, rank=rank)
