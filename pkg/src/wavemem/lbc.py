"""Wave operator for linear boundary conditions.

In basis coordinates the operator is a block shift (block ``i+1`` moves to
block ``i``) plus a boundary block row equal to the task's ``F`` matrix,
which writes into block ``s``. A :class:`WaveBasis` embeds those ``s*d``
coordinates into an ``n``-dimensional hidden space.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hds import LINEAR_VARIANTS, HdsSpec, copy_matrix
from .numerics import as_matrix, pinv, rank

BIORTHOGONALITY_TOL = 1e-8
MAX_BASIS_RETRIES = 100


@dataclass(frozen=True)
class WaveBasis:
    """Columns of ``psi`` are the basis vectors; rows of ``dual`` the covectors."""

    psi: np.ndarray
    dual: np.ndarray
    s: int
    d: int

    def __post_init__(self):
        psi = as_matrix(self.psi, "psi")
        dual = as_matrix(self.dual, "dual")
        sd = self.s * self.d
        if psi.shape[1] != sd or dual.shape != (sd, psi.shape[0]):
            raise ValueError(f"basis must be n x {sd} with an {sd} x n dual")
        if psi.shape[0] < sd:
            raise ValueError("ambient dimension must be at least s*d")
        if rank(psi) < sd:
            raise ValueError("basis is rank deficient")
        if np.abs(dual @ psi - np.eye(sd)).max() > BIORTHOGONALITY_TOL * max(1.0, np.abs(psi).max()):
            raise ValueError("dual is not biorthogonal to psi")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "dual", dual)

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    @classmethod
    def from_columns(cls, psi, s: int, d: int) -> "WaveBasis":
        psi = as_matrix(psi, "psi")
        return cls(psi, pinv(psi), s, d)

    def block(self, i: int) -> np.ndarray:
        """Basis vectors of subspace ``i`` (1-based), shape ``(n, d)``."""
        return self.psi[:, (i - 1) * self.d : i * self.d]

    def dual_block(self, i: int) -> np.ndarray:
        return self.dual[(i - 1) * self.d : i * self.d]

    def encode(self, flat) -> np.ndarray:
        return self.psi @ np.asarray(flat, dtype=np.float64)

    def decode(self, h) -> np.ndarray:
        return self.dual @ np.asarray(h, dtype=np.float64)


def standard_basis(s: int, d: int, n: int | None = None) -> WaveBasis:
    n = s * d if n is None else n
    psi = np.eye(n)[:, : s * d]
    return WaveBasis(psi, psi.T.copy(), s, d)


def random_basis(n: int, s: int, d: int, seed, conditioning: float = 1.0,
                 kind: str = "gaussian") -> WaveBasis:
    """Seeded full-rank basis.

    ``kind="gaussian"`` builds ``Q1 diag(sigma) Q2`` with singular values
    log-spaced on ``[1, conditioning]``; ``conditioning=1`` gives orthonormal
    columns. ``kind="permutation"`` picks ``s*d`` distinct columns of the
    identity in random order.
    """
    sd = s * d
    if n < sd:
        raise ValueError(f"n ({n}) must be at least s*d ({sd})")
    if conditioning < 1:
        raise ValueError("conditioning must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "permutation":
        cols = rng.permutation(n)[:sd]
        psi = np.eye(n)[:, cols]
        return WaveBasis(psi, psi.T.copy(), s, d)
    if kind != "gaussian":
        raise ValueError(f"unknown basis kind {kind!r}")
    for _ in range(MAX_BASIS_RETRIES):
        q1, _ = np.linalg.qr(rng.normal(size=(n, sd)))
        q2, _ = np.linalg.qr(rng.normal(size=(sd, sd)))
        sigma = np.geomspace(1.0, conditioning, sd) if sd > 1 else np.ones(1)
        psi = (q1 * sigma) @ q2
        if np.linalg.cond(psi) <= conditioning * (1 + 1e-9):
            return WaveBasis(psi, pinv(psi), s, d)
    raise RuntimeError(f"could not reach conditioning {conditioning} in {MAX_BASIS_RETRIES} tries")


def shift_coords(s: int, d: int) -> np.ndarray:
    """Coordinate matrix moving block ``i+1`` into block ``i``; block ``s`` left empty."""
    sd = s * d
    S = np.zeros((sd, sd))
    idx = np.arange((s - 1) * d)
    S[idx, idx + d] = 1.0
    return S


def boundary_coords(F: np.ndarray, s: int, d: int) -> np.ndarray:
    sd = s * d
    B = np.zeros((sd, sd))
    B[(s - 1) * d :] = F
    return B


@dataclass(frozen=True)
class PhiOperator:
    matrix: np.ndarray
    basis: WaveBasis
    shift_part: np.ndarray
    boundary_part: np.ndarray
    coords: np.ndarray = field(repr=False)

    @property
    def s(self) -> int:
        return self.basis.s

    @property
    def d(self) -> int:
        return self.basis.d

    def step(self, h) -> np.ndarray:
        return self.matrix @ h


def phi_from_matrix(F, basis: WaveBasis) -> PhiOperator:
    s, d = basis.s, basis.d
    F = as_matrix(F, "F")
    if F.shape != (d, s * d):
        raise ValueError(f"boundary matrix must be {d}x{s * d}, got {F.shape}")
    S = shift_coords(s, d)
    B = boundary_coords(F, s, d)
    shift_part = basis.psi @ S @ basis.dual
    boundary_part = basis.psi @ B @ basis.dual
    return PhiOperator(shift_part + boundary_part, basis, shift_part, boundary_part, S + B)


def build_phi(f, basis: WaveBasis) -> PhiOperator:
    """Wave operator for a linear boundary ``f`` in ``basis``.

    ``f`` may be a boundary object with a matrix form or an :class:`HdsSpec`
    wrapping one. A signed linear boundary contributes its pre-sign matrix.
    """
    if isinstance(f, HdsSpec):
        f = f.boundary
    if not isinstance(f, LINEAR_VARIANTS):
        raise TypeError(f"{type(f).__name__} has no linear matrix form")
    return phi_from_matrix(f.matrix(basis.s, basis.d), basis)


def build_phi_repeat_copy(s: int, d: int, basis: WaveBasis | None = None) -> PhiOperator:
    """Cyclic shift over subspaces: block 1 is copied into block ``s``."""
    basis = standard_basis(s, d) if basis is None else basis
    if (basis.s, basis.d) != (s, d):
        raise ValueError("basis dimensions do not match (s, d)")
    return phi_from_matrix(copy_matrix(s, d), basis)


def readout(basis: WaveBasis, h) -> np.ndarray:
    """Contents of subspace ``s`` expressed in the standard basis."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] != basis.n:
        raise ValueError(f"hidden state must have length {basis.n}")
    return basis.dual_block(basis.s) @ h


def readout_matrix(basis: WaveBasis) -> np.ndarray:
    return basis.dual_block(basis.s).copy()
