"""Dense linear algebra used throughout the package.

The eigensolver and SVD are LAPACK's (through numpy); this module pins down
the contracts around them: input validation, deterministic ordering and sign
conventions, and the pseudo-inverse cutoff.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

PINV_CUTOFF_FACTOR = 64.0


class EigenConvergenceError(np.linalg.LinAlgError):
    """Raised when the QR iteration fails to converge.

    ``diagnostics`` carries whatever is known about the failure (matrix size,
    norm, the LAPACK message).
    """

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ComplexSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.eigenvalues)

    @property
    def arguments(self) -> np.ndarray:
        return np.angle(self.eigenvalues)

    def pairs(self) -> list[tuple[float, float]]:
        return [(float(z.real), float(z.imag)) for z in self.eigenvalues]


@dataclass(frozen=True)
class PrincipalComponents:
    """Columns of ``components`` are unit directions, largest variance first."""

    components: np.ndarray
    variances: np.ndarray
    truncated: bool = False


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate a real 2-D finite array and return it as float64."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _square(a, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def spectral_order(values: np.ndarray) -> np.ndarray:
    """Indices sorting eigenvalues by argument ascending, ties by magnitude descending."""
    return np.lexsort((-np.abs(values), np.angle(values)))


def eig(a, vectors: bool = True) -> ComplexSpectrum:
    """Full eigendecomposition of a general real square matrix.

    Eigenvectors are unit-norm columns, phase-fixed so that their
    largest-magnitude component is real and positive. Output is ordered by
    :func:`spectral_order`.
    """
    m = _square(a)
    n = m.shape[0]
    if n == 0:
        return ComplexSpectrum(np.zeros(0, complex), np.zeros((0, 0), complex) if vectors else None)
    try:
        if vectors:
            w, v = np.linalg.eig(m)
        else:
            w, v = np.linalg.eigvals(m), None
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(
            f"eigenvalue iteration did not converge for {n}x{n} matrix",
            {"n": n, "norm_inf": float(np.abs(m).sum(axis=1).max()), "lapack": str(exc)},
        ) from exc
    w = np.asarray(w, dtype=complex)
    order = spectral_order(w)
    w = w[order]
    if v is None:
        return ComplexSpectrum(w)
    v = np.asarray(v, dtype=complex)[:, order]
    v = v / np.linalg.norm(v, axis=0)
    pivot = np.argmax(np.abs(v), axis=0)
    phase = v[pivot, np.arange(n)]
    v = v * (np.abs(phase) / phase)
    return ComplexSpectrum(w, v)


def eigvals(a) -> np.ndarray:
    return eig(a, vectors=False).eigenvalues


def spectral_radius(a) -> float:
    w = eigvals(a)
    return float(np.abs(w).max()) if len(w) else 0.0


def pinv_cutoff(singular_values: np.ndarray, shape: tuple[int, int]) -> float:
    if singular_values.size == 0:
        return 0.0
    return float(singular_values[0] * max(shape) * np.finfo(np.float64).eps * PINV_CUTOFF_FACTOR)


def pinv(a) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values at or below ``sigma_max * max(rows, cols) * eps * 64`` are
    treated as zero.
    """
    m = as_matrix(a)
    rows, cols = m.shape
    if m.size == 0:
        return np.zeros((cols, rows))
    u, sv, vt = np.linalg.svd(m, full_matrices=False)
    keep = sv > pinv_cutoff(sv, m.shape)
    if not keep.any():
        return np.zeros((cols, rows))
    return (vt[keep].T / sv[keep]) @ u[:, keep].T


def rank(a) -> int:
    m = as_matrix(a)
    if m.size == 0:
        return 0
    sv = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(sv > pinv_cutoff(sv, m.shape)))


def projector(a) -> np.ndarray:
    """Orthogonal projector onto the column space of ``a`` (``A A^+``)."""
    m = as_matrix(a)
    return m @ pinv(m)


def principal_components(samples, k: int) -> PrincipalComponents:
    """Top-``k`` principal directions of ``samples`` (rows are observations).

    If fewer than ``k`` directions carry non-zero variance, the achievable
    number is returned with ``truncated=True``.
    """
    x = as_matrix(samples, "samples")
    if k < 0:
        raise ValueError("k must be non-negative")
    n_obs, dim = x.shape
    if n_obs < k:
        raise ValueError(f"need at least k={k} observations, got {n_obs}")
    empty = PrincipalComponents(np.zeros((dim, 0)), np.zeros(0), truncated=k > 0)
    if k == 0:
        return PrincipalComponents(np.zeros((dim, 0)), np.zeros(0))
    if n_obs < 2:
        return empty
    centered = x - x.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    achievable = int(np.sum(sv > pinv_cutoff(sv, centered.shape))) if sv[0] > 0 else 0
    take = min(k, achievable)
    if take == 0:
        return empty
    comps = vt[:take].T.copy()
    pivot = np.argmax(np.abs(comps), axis=0)
    comps *= np.sign(comps[pivot, np.arange(take)])
    variances = sv[:take] ** 2 / (n_obs - 1)
    return PrincipalComponents(comps, variances, truncated=take < k)


def norm_inf(a) -> float:
    """Induced infinity norm (max absolute row sum)."""
    m = np.atleast_2d(np.asarray(a))
    if m.size == 0:
        return 0.0
    return float(np.abs(m).sum(axis=1).max())
