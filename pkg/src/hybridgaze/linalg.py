"""Symmetric eigendecomposition and pseudo-inverse kernels.

Everything here is plain numpy on float64 matrices. The eigensolver is a
cyclic Jacobi iteration: at the matrix sizes this package works with
(feature dimensions of a few dozen) it is accurate, simple and fully
deterministic, which the training harness relies on for reproducible runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

MAX_SWEEPS = 100
OFF_DIAG_TOL = 1e-12       # relative to the Frobenius norm of the input
SYMMETRY_RTOL = 1e-8
PINV_REL_TOL = 1e-6        # eigenvalue cutoff relative to the largest one
GAP_FLOOR = 1e-6           # clamp on eigenvalue gaps in the backward rule


def check_matrix(a, name="matrix"):
    """Validate and return a float 2-D array with at least one row/column."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} has a zero dimension: shape={a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def gram(z):
    """Gram matrix of a batch feature matrix: columns against columns.

    The product is symmetrized so the postcondition holds exactly, not just
    up to BLAS round-off.
    """
    z = check_matrix(z, "feature matrix")
    g = z.T @ z
    return 0.5 * (g + g.T)


@dataclass
class GramSpectrum:
    """Eigendecomposition of a symmetric PSD matrix, eigenvalues descending.

    ``effective_rank`` counts eigenvalues above ``PINV_REL_TOL`` relative to
    the largest one (at least 1, even for the zero matrix).
    """

    eigenvalues: np.ndarray   # shape (n,), non-increasing
    eigenvectors: np.ndarray  # shape (n, n), columns are eigenvectors
    effective_rank: int

    @property
    def dim(self):
        return self.eigenvalues.shape[0]


def _round_robin_rounds(n):
    """Tournament schedule covering every index pair once per sweep.

    Each round holds mutually disjoint pairs, so the rotations of one round
    commute and can be applied as a single orthogonal update.
    """
    m = n if n % 2 == 0 else n + 1
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(min(players[i], players[m - 1 - i]),
                  max(players[i], players[m - 1 - i]))
                 for i in range(m // 2)]
        rounds.append([(p, q) for p, q in pairs if q < n])
        players = [players[0], players[-1]] + players[1:-1]
    return [np.array(r, dtype=int).reshape(-1, 2) for r in rounds if r]


def _jacobi(a):
    """Cyclic Jacobi rotations. Returns (eigenvalues, eigenvectors, sweeps).

    A sweep visits every off-diagonal pair once, in round-robin order; the
    disjoint rotations of a round are batched into one similarity transform
    (exactly equivalent to applying them one by one).
    """
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    if n == 1:
        return np.diag(a).copy(), v, 0
    rounds = _round_robin_rounds(n)
    off_tol = OFF_DIAG_TOL * np.linalg.norm(a, "fro")
    for sweep in range(MAX_SWEEPS):
        off = math.sqrt(2.0 * np.sum(np.tril(a, -1) ** 2))
        if off <= off_tol:
            return np.diag(a).copy(), v, sweep
        for pairs in rounds:
            ps, qs = pairs[:, 0], pairs[:, 1]
            apq = a[ps, qs]
            # skip negligible entries: rotating on them gains nothing and
            # atan2 would turn an exact zero into a 90-degree swap
            active = np.abs(apq) > 1e-30 * (np.abs(a[ps, ps])
                                            + np.abs(a[qs, qs]) + 1.0)
            if not np.any(active):
                continue
            ps, qs, apq = ps[active], qs[active], apq[active]
            phi = 0.5 * np.arctan2(2.0 * apq, a[qs, qs] - a[ps, ps])
            c, s = np.cos(phi), np.sin(phi)
            rot = np.eye(n)
            rot[ps, ps] = c
            rot[qs, qs] = c
            rot[ps, qs] = s
            rot[qs, ps] = -s
            a = rot.T @ a @ rot
            a = 0.5 * (a + a.T)
            a[ps, qs] = 0.0
            a[qs, ps] = 0.0
            v = v @ rot
    raise NumericalError(
        f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps "
        f"(off-diagonal norm {off:.3e}, tolerance {off_tol:.3e})"
    )


def sym_eig(g, rel_tol=PINV_REL_TOL):
    """Eigendecomposition of a symmetric matrix as a :class:`GramSpectrum`.

    Eigenvalues come out sorted non-increasing and each eigenvector column is
    sign-fixed (largest-magnitude entry positive) so repeated runs are
    bit-identical.
    """
    g = check_matrix(g, "gram matrix")
    n, m = g.shape
    if n != m:
        raise ValueError(f"matrix must be square, got shape {g.shape}")
    scale = np.max(np.abs(g))
    if np.max(np.abs(g - g.T)) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise ValueError("matrix is not symmetric within tolerance")
    evals, vecs, _ = _jacobi(g)
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    vecs = vecs[:, order]
    flip = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(n)] < 0
    vecs[:, flip] *= -1.0
    if evals[0] > 0.0:
        rank = max(int(np.sum(evals > rel_tol * evals[0])), 1)
    else:
        rank = 1
    return GramSpectrum(evals, vecs, rank)


def pinv_from_spectrum(spectrum, rel_tol=PINV_REL_TOL):
    """Moore-Penrose pseudo-inverse rebuilt from an eigendecomposition.

    Eigenvalues above ``rel_tol`` times the largest one are inverted, the
    rest contribute nothing. A non-positive leading eigenvalue (the zero
    matrix) yields the zero matrix rather than an error.
    """
    if rel_tol <= 0.0:
        raise ValueError("rel_tol must be positive")
    lam = spectrum.eigenvalues
    v = spectrum.eigenvectors
    if lam[0] <= 0.0:
        return np.zeros_like(v)
    keep = lam > rel_tol * lam[0]
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    return (v * inv) @ v.T


def gap_clamped_inverse_gaps(eigenvalues, gap_floor=GAP_FLOOR):
    """Matrix F with F[i, j] = 1 / (lam[j] - lam[i]) off the diagonal.

    Gaps smaller in magnitude than ``gap_floor * max(lam[0], 1)`` are clamped
    to that floor with their sign kept, so degenerate spectra give a bounded
    (biased) result instead of blowing up.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    diff = lam[None, :] - lam[:, None]
    floor = gap_floor * max(lam[0], 1.0)
    sign = np.where(diff >= 0.0, 1.0, -1.0)
    denom = np.where(np.abs(diff) < floor, sign * floor, diff)
    f = 1.0 / denom
    np.fill_diagonal(f, 0.0)
    return f


def sym_eig_backward(spectrum, d_eigenvalues=None, d_eigenvectors=None,
                     gap_floor=GAP_FLOOR):
    """Reverse-mode rule for :func:`sym_eig`.

    Given cotangents for the eigenvalues and/or eigenvectors, returns the
    cotangent for the decomposed symmetric matrix:

        dG = V (diag(dLam) + sym(F o (V^T dV))) V^T

    with the gap matrix F from :func:`gap_clamped_inverse_gaps` and
    sym(X) = (X + X^T) / 2. The result is symmetric.
    """
    lam = spectrum.eigenvalues
    v = spectrum.eigenvectors
    n = lam.shape[0]
    core = np.zeros((n, n))
    if d_eigenvalues is not None:
        core += np.diag(np.asarray(d_eigenvalues, dtype=float).reshape(n))
    if d_eigenvectors is not None:
        f = gap_clamped_inverse_gaps(lam, gap_floor)
        m = f * (v.T @ np.asarray(d_eigenvectors, dtype=float))
        core += 0.5 * (m + m.T)
    dg = v @ core @ v.T
    return 0.5 * (dg + dg.T)
