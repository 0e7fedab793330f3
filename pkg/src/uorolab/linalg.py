"""Minimal dense real linear algebra: symmetric eigendecomposition by cyclic
Jacobi rotations, fractional powers of PSD matrices, and Frobenius/trace
utilities.

Everything operates on plain float64 numpy arrays and is dimensioned for desk
scale (up to a few hundred); all functions are pure.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    NotPositiveDefiniteError,
    NotSymmetricError,
    ShapeError,
    SingularMatrixError,
)

SYMMETRY_RTOL = 1e-8
# Stop sweeping once the off-diagonal Frobenius mass falls below this fraction
# of the matrix norm, or after the sweep cap.
JACOBI_OFFDIAG_RTOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition M = U diag(values) U^T, eigenvalues descending."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _require_square_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    scale = frob_norm(m)
    if frob_norm(m - m.T) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise NotSymmetricError("matrix is not symmetric within tolerance")
    return 0.5 * (m + m.T)


def sym_eig(m: np.ndarray) -> SymEig:
    """Eigendecompose a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in sweeps over all (p, q) pairs until the
    off-diagonal Frobenius mass is below JACOBI_OFFDIAG_RTOL * ||M||_F
    (or the sweep cap is hit, which at these sizes it never is).
    """
    a = _require_square_symmetric(m)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(frob_norm(a), 1e-300)
    target = JACOBI_OFFDIAG_RTOL * scale

    def offdiag_mass() -> float:
        return np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))

    for _ in range(JACOBI_MAX_SWEEPS):
        if offdiag_mass() <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    a[p, q] = a[q, p] = 0.0
                    continue
                # Stable rotation: tan(2 phi) = 2 a_pq / (a_qq - a_pp).
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0 else 1.0
                t = t / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    values = np.diag(a).copy()
    order = np.argsort(values)[::-1]
    return SymEig(values=values[order], vectors=v[:, order])


def psd_frac_power(m: np.ndarray, p: float) -> np.ndarray:
    """Return M^p for symmetric PSD M via its eigendecomposition.

    Eigenvalues in [-1e-10 * max|lambda|, 0) are clamped to zero (roundoff);
    anything more negative raises.  Negative powers require strictly positive
    spectrum after clamping.
    """
    eig = sym_eig(m)
    lam = eig.values.copy()
    lam_scale = max(np.max(np.abs(lam)), 0.0)
    clamp = -1e-10 * lam_scale
    if np.any(lam < clamp):
        raise NotPositiveDefiniteError(
            f"matrix has eigenvalue {lam.min():.3e} below the PSD clamp {clamp:.3e}"
        )
    lam[lam < 0.0] = 0.0
    if p < 0 and np.any(lam == 0.0):
        raise SingularMatrixError("negative power of a singular PSD matrix")
    powered = (eig.vectors * lam**p) @ eig.vectors.T
    return 0.5 * (powered + powered.T)


def frob_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product <A, B> = sum_ij A_ij B_ij."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def frob_norm(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.asarray(a, dtype=np.float64) ** 2)))


def trace(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace needs a square matrix, got shape {a.shape}")
    return float(np.trace(a))
