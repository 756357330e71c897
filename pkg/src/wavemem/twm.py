"""Discrete traveling-wave memory.

The substrate is an ``(s, d)`` array: row ``i-1`` is column ``i`` of the
lattice and each of the ``d`` channels is an independent 1-D wave. Every step
the contents move one column toward column 1 (where they leave through the
open end) and column ``s`` is refilled by the boundary function applied to
the whole previous substrate.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .hds import BoundaryFn, HdsSpec, SelfAttentionBoundary, _history


@dataclass(frozen=True)
class WaveSubstrate:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64)
        if h.ndim != 2:
            raise ValueError("substrate must be an (s, d) array")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def s(self) -> int:
        return self.h.shape[0]

    @property
    def d(self) -> int:
        return self.h.shape[1]

    def column(self, i: int) -> np.ndarray:
        """Column ``i`` (1-based)."""
        return self.h[i - 1]

    def flatten(self) -> np.ndarray:
        """Flat vector with column ``i``, channel ``j`` at ``(i-1)*d + (j-1)``."""
        return self.h.reshape(-1).copy()

    @classmethod
    def unflatten(cls, flat, s: int, d: int) -> "WaveSubstrate":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (s * d,):
            raise ValueError(f"expected {s * d} values, got shape {flat.shape}")
        return cls(flat.reshape(s, d))

    @classmethod
    def zeros(cls, s: int, d: int) -> "WaveSubstrate":
        return cls(np.zeros((s, d)))

    def to_csv(self, path) -> None:
        """Write ``s`` rows by ``d`` columns, row ``i`` being column ``i``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"ch{j + 1}" for j in range(self.d)])
            for row in self.h:
                w.writerow([f"{float(x):.17g}" for x in row])

    @classmethod
    def from_csv(cls, path) -> "WaveSubstrate":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(np.array([[float(x) for x in r] for r in rows]))


def twm_step(sub: WaveSubstrate, boundary: BoundaryFn) -> WaveSubstrate:
    new = np.empty_like(sub.h)
    new[:-1] = sub.h[1:]
    out = np.asarray(boundary(sub.h), dtype=np.float64)
    if out.shape != (sub.d,):
        raise ValueError(f"boundary returned shape {out.shape}, expected ({sub.d},)")
    new[-1] = out
    return WaveSubstrate(new)


def run(sub: WaveSubstrate, boundary: BoundaryFn, steps: int) -> np.ndarray:
    """Column-``s`` readout after each of ``steps`` steps, shape ``(steps, d)``."""
    out = np.empty((steps, sub.d))
    for t in range(steps):
        sub = twm_step(sub, boundary)
        out[t] = sub.h[-1]
    return out


def twm_from_hds(spec: HdsSpec, init) -> tuple[WaveSubstrate, BoundaryFn]:
    """Substrate holding the initial states column by column, plus ``spec``'s boundary.

    Stepping it and reading column ``s`` reproduces the system's trajectory.
    """
    return WaveSubstrate(_history(spec, init)), spec.boundary


@dataclass(frozen=True)
class SbcParams:
    W_K: np.ndarray
    W_Q: np.ndarray
    W_V: np.ndarray
    temperature: float = 1.0

    def boundary(self) -> SelfAttentionBoundary:
        return SelfAttentionBoundary(self.W_K, self.W_Q, self.W_V, self.temperature)

    @classmethod
    def random(cls, d: int, seed, scale: float = 1.0) -> "SbcParams":
        rng = np.random.default_rng(seed)
        w = rng.normal(scale=scale / np.sqrt(d), size=(3, d, d))
        return cls(w[0], w[1], w[2])


def sbc_boundary(sub: WaveSubstrate, p: SbcParams) -> np.ndarray:
    """Attention of the newest column over all ``s`` columns."""
    if p.W_K.shape != (sub.d, sub.d):
        raise ValueError(f"attention matrices must be {sub.d}x{sub.d}")
    return p.boundary()(sub.h)


def sbc_autoregress(init: WaveSubstrate, p: SbcParams, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if p.W_K.shape != (init.d, init.d):
        raise ValueError(f"attention matrices must be {init.d}x{init.d}")
    return run(init, p.boundary(), steps)
