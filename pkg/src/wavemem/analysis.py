"""Compare trained networks with the wave operator.

Covers spectral comparison, recovery of the wave basis from trained weights,
fixed points and their linearisation, hidden-state projection, weight
transformation and the gradient-propagation study.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hds import HdsSpec, generate_trajectory
from .lbc import PhiOperator
from .numerics import as_matrix, eig, pinv, principal_components, rank, spectral_radius
from .rnn import ElmanRnn, TrainConfig, bptt_train, forward, input_gradients

PERSISTENCE_CUTOFF = 1.0
PERSISTENCE_BAND = 0.05
POLLUTION_THRESHOLD = 0.4


def circular_distance(a, b):
    diff = np.abs(np.asarray(a) - np.asarray(b)) % (2 * np.pi)
    return np.minimum(diff, 2 * np.pi - diff)


@dataclass
class SpectralReport:
    theoretical: np.ndarray
    empirical: np.ndarray
    theoretical_kept: np.ndarray
    empirical_kept: np.ndarray
    pairing: list
    distances: np.ndarray
    mae_argument: float
    indeterminate: bool
    clusters: list
    threshold: float

    def to_dict(self) -> dict:
        return {
            "mae_argument": None if math.isnan(self.mae_argument) else self.mae_argument,
            "indeterminate": self.indeterminate,
            "threshold": self.threshold,
            "n_theoretical": int(len(self.theoretical_kept)),
            "n_empirical": int(len(self.empirical_kept)),
            "clusters": self.clusters,
        }


def _operator_matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, PhiOperator) else as_matrix(op)


def _clusters(theo: np.ndarray, emp: np.ndarray, tol: float = 1e-6) -> list:
    angles: list[float] = []
    for a in np.angle(theo):
        if not any(circular_distance(a, c) <= tol for c in angles):
            angles.append(float(a))
    angles.sort()
    if not angles:
        return []
    centers = np.array(angles)
    theo_counts = np.zeros(len(centers), int)
    emp_counts = np.zeros(len(centers), int)
    for vals, counts in ((theo, theo_counts), (emp, emp_counts)):
        for a in np.angle(vals):
            counts[int(np.argmin(circular_distance(a, centers)))] += 1
    return [{"angle": float(c), "theoretical": int(t), "empirical": int(e)}
            for c, t, e in zip(centers, theo_counts, emp_counts)]


def spectral_compare(phi, w_hh, magnitude_cutoff: float = PERSISTENCE_CUTOFF,
                     band: float = PERSISTENCE_BAND) -> SpectralReport:
    """Argument MAE between the persistent parts of two spectra.

    Eigenvalues with magnitude at least ``magnitude_cutoff - band`` are kept
    on both sides. Theoretical eigenvalues, taken in order of argument, each
    claim the nearest unclaimed empirical one on the circle. The result is
    indeterminate when the kept counts differ.
    """
    theo = eig(_operator_matrix(phi), vectors=False).eigenvalues
    emp = eig(as_matrix(w_hh, "w_hh"), vectors=False).eigenvalues
    threshold = magnitude_cutoff - band
    theo_kept = theo[np.abs(theo) >= threshold]
    emp_kept = emp[np.abs(emp) >= threshold]
    clusters = _clusters(theo_kept, emp_kept)
    if len(theo_kept) != len(emp_kept):
        return SpectralReport(theo, emp, theo_kept, emp_kept, [], np.zeros(0), float("nan"),
                              True, clusters, threshold)
    emp_angles = np.angle(emp_kept)
    free = np.ones(len(emp_kept), bool)
    pairing, dists = [], []
    for i in range(len(theo_kept)):
        dist = circular_distance(np.angle(theo_kept[i]), emp_angles)
        dist[~free] = np.inf
        j = int(np.argmin(dist))
        free[j] = False
        pairing.append((i, j))
        dists.append(float(dist[j]))
    dists = np.array(dists)
    mae = float(dists.mean()) if len(dists) else 0.0
    return SpectralReport(theo, emp, theo_kept, emp_kept, pairing, dists, mae, False, clusters, threshold)


# -- basis recovery -----------------------------------------------------------

@dataclass
class BasisRecovery:
    """Recovered wave basis; ``blocks[k-1]`` spans subspace ``k``."""

    blocks: list
    psi_perp: np.ndarray
    transient_cutoff: float
    block_condition: list
    block_rank: list
    pollution: list
    reconstruction_residual: float
    flagged: list = field(default_factory=list)

    @property
    def s(self) -> int:
        return len(self.blocks)

    @property
    def d(self) -> int:
        return self.blocks[0].shape[1]

    @property
    def psi(self) -> np.ndarray:
        return np.concatenate(self.blocks, axis=1)

    def full_basis(self, k: Optional[int] = None) -> np.ndarray:
        perp = self.psi_perp if k is None else self.psi_perp[:, :k]
        return np.concatenate([self.psi, perp], axis=1)

    def diagnostics(self) -> dict:
        return {
            "transient_cutoff": self.transient_cutoff,
            "block_condition": self.block_condition,
            "block_rank": self.block_rank,
            "pollution": self.pollution,
            "reconstruction_residual": self.reconstruction_residual,
            "flagged_blocks": self.flagged,
            "n_perp": int(self.psi_perp.shape[1]),
        }


def transient_directions(w_hh: np.ndarray, cutoff: float) -> np.ndarray:
    """Real basis of the eigen-directions with ``|lambda| < cutoff``.

    A complex pair contributes the real and imaginary parts of one of its
    eigenvectors, which span its real invariant plane.
    """
    spec = eig(w_hh)
    cols = []
    for lam, v in zip(spec.eigenvalues, spec.eigenvectors.T):
        if abs(lam) >= cutoff or lam.imag < 0:
            continue
        cols.append(v.real)
        if lam.imag > 0:
            cols.append(v.imag)
    if not cols:
        return np.zeros((w_hh.shape[0], 0))
    return np.stack(cols, axis=1)


def simulate_states(model: ElmanRnn, s: int, n_traj: int = 64, horizon: Optional[int] = None,
                    seed=0) -> np.ndarray:
    """Hidden states from random binary inputs, stacked as rows."""
    horizon = 3 * s if horizon is None else horizon
    rng = np.random.default_rng(seed)
    inputs = rng.choice(np.array([-1.0, 1.0]), size=(n_traj, s, model.d))
    H, _ = forward(model, inputs, horizon)
    return H.reshape(-1, model.n)


def approximate_basis(model: ElmanRnn, s: int, d: Optional[int] = None,
                      transient_cutoff: float = PERSISTENCE_CUTOFF - PERSISTENCE_BAND,
                      sample_states=None, alpha: Optional[float] = None,
                      n_perp: Optional[int] = None, seed=0) -> BasisRecovery:
    """Recover the wave basis from trained weights.

    Subspace ``s`` is spanned by ``pinv(W_r)``; subspace ``k < s`` by
    ``(W_hh^T)^k pinv(W_r)`` with its components along transient
    eigen-directions projected out. The complementary directions ``psi_perp``
    are principal components of simulated hidden states after removing their
    projection onto the recovered span. ``alpha`` is accepted and unused.
    """
    del alpha
    d = model.d if d is None else d
    if d != model.d:
        raise ValueError(f"model has d={model.d}, got d={d}")
    W = model.W_hh
    base = pinv(model.W_r)
    T = transient_directions(W, transient_cutoff)
    P_T = T @ pinv(T) if T.shape[1] else None
    blocks: list = [None] * s
    blocks[s - 1] = base
    power = base
    for k in range(1, s):
        power = W.T @ power
        blk = power.copy()
        if P_T is not None:
            blk -= P_T @ blk
        blocks[k - 1] = blk

    psi = np.concatenate(blocks, axis=1)
    psi_pinv = pinv(psi)
    if sample_states is None:
        sample_states = simulate_states(model, s, seed=seed)
    S = as_matrix(sample_states, "sample_states")
    resid = S - (psi @ (psi_pinv @ S.T)).T
    scale = np.linalg.norm(S)
    recon = float(np.linalg.norm(resid) / scale) if scale > 0 else 0.0
    want = max(model.n - rank(psi), 0) if n_perp is None else n_perp
    want = min(want, S.shape[0])
    psi_perp = principal_components(resid, want).components

    block_cond = [float(np.linalg.cond(b)) if rank(b) == d else float("inf") for b in blocks]
    block_rank = [rank(b) for b in blocks]
    # unit columns so the ratio below does not depend on block scales
    norms = np.linalg.norm(psi, axis=0)
    unit = psi / np.where(norms > 0, norms, 1.0)
    C = pinv(unit) @ W @ unit
    pollution = []
    for k in range(1, s):
        rows = C[(k - 1) * d : k * d]
        total = np.linalg.norm(rows)
        off = rows.copy()
        off[:, k * d : (k + 1) * d] = 0.0
        pollution.append(float(np.linalg.norm(off) / total) if total > 0 else float("inf"))
    flagged = [k + 1 for k in range(s) if block_rank[k] < d]
    flagged += [k for k, p in enumerate(pollution, start=1) if p > POLLUTION_THRESHOLD and k not in flagged]
    return BasisRecovery(blocks, psi_perp, transient_cutoff, block_cond, block_rank, pollution,
                         recon, sorted(flagged))


def project_hidden(recovery: BasisRecovery, h_trace, normalize: bool = False) -> np.ndarray:
    """Basis coordinates ``pinv(Psi) h(t)`` of each state, shape ``(T, s, d)``.

    With ``normalize`` each subspace is scaled to unit standard deviation over
    the trace.
    """
    H = np.atleast_2d(np.asarray(h_trace, dtype=np.float64))
    psi = recovery.psi
    if H.shape[1] != psi.shape[0]:
        raise ValueError(f"hidden states must have length {psi.shape[0]}")
    coords = (pinv(psi) @ H.T).T.reshape(len(H), recovery.s, recovery.d)
    if normalize:
        sd = coords.std(axis=(0, 2), keepdims=True)
        coords = coords / np.where(sd > 0, sd, 1.0)
    return coords


def wave_residual(recovery: BasisRecovery, h_trace) -> np.ndarray:
    """Norm of the activity outside the recovered span at each step."""
    H = np.atleast_2d(np.asarray(h_trace, dtype=np.float64))
    psi = recovery.psi
    return np.linalg.norm(H - (psi @ (pinv(psi) @ H.T)).T, axis=1)


def transform_weights(recovery: BasisRecovery, w_hh, k: Optional[int] = None) -> np.ndarray:
    """``pinv(B) W_hh B`` for ``B = [Psi | Psi_perp[:, :k]]``."""
    W = as_matrix(w_hh, "w_hh")
    B = recovery.full_basis(k)
    if W.shape != (B.shape[0], B.shape[0]):
        raise ValueError(f"w_hh must be {B.shape[0]}x{B.shape[0]}")
    return pinv(B) @ W @ B


def repeat_copy_coordinates(inputs: np.ndarray, t: int) -> np.ndarray:
    """Expected substrate after ``t`` output steps of repeat copy, shape ``(s, d)``.

    Input ``mu`` sits in subspace ``((mu - t - 1) mod s) + 1``.
    """
    inputs = np.asarray(inputs)
    s = inputs.shape[0]
    out = np.empty_like(inputs, dtype=np.float64)
    for mu in range(1, s + 1):
        out[(mu - t - 1) % s] = inputs[mu - 1]
    return out


# -- fixed points ---------------------------------------------------------------

@dataclass
class FixedPointResult:
    h_star: np.ndarray
    residual: float
    jacobian: np.ndarray
    converged: bool
    iterations: int = 0


def linearize(model: ElmanRnn, h) -> np.ndarray:
    """``diag(1 - tanh^2(W_hh h + b)) W_hh``."""
    gain = 1.0 - np.tanh(model.W_hh @ h + model.b) ** 2
    return gain[:, None] * model.W_hh


def _descend(W, b, x, tol, max_iters, c=1e-4):
    def resid(z):
        return np.tanh(W @ z + b) - z

    r = resid(x)
    q = float(r @ r)
    step = 1.0
    for it in range(max_iters):
        if math.sqrt(q) <= tol:
            return x, math.sqrt(q), True, it
        t = np.tanh(W @ x + b)
        grad = 2.0 * (W.T @ ((1.0 - t * t) * r) - r)
        g2 = float(grad @ grad)
        if g2 == 0.0:
            break
        step = min(step * 2.0, 1e6)
        while True:
            x_new = x - step * grad
            r_new = resid(x_new)
            q_new = float(r_new @ r_new)
            if q_new <= q - c * step * g2 or step < 1e-20:
                break
            step *= 0.5
        if step < 1e-20:
            break
        x, r, q = x_new, r_new, q_new
    res = math.sqrt(q)
    return x, res, res <= tol, max_iters


def find_fixed_points(model: ElmanRnn, n_inits: int = 16, tolerance: float = 1e-6,
                      max_iters: int = 10000, seed=0, dedupe: float = 1e-4) -> list[FixedPointResult]:
    """Minimise ``||tanh(W_hh x + b) - x||^2`` from the origin and random starts.

    Gradient descent with Armijo backtracking. Converged points closer than
    ``dedupe`` to an earlier one are dropped; starts that did not converge
    are kept with their final residual.
    """
    rng = np.random.default_rng(seed)
    starts = [np.zeros(model.n)] + [rng.uniform(-1.0, 1.0, model.n) for _ in range(n_inits)]
    found: list[FixedPointResult] = []
    for x0 in starts:
        x, res, ok, its = _descend(model.W_hh, model.b, x0, tolerance, max_iters)
        if ok and any(f.converged and np.linalg.norm(f.h_star - x) < dedupe for f in found):
            continue
        found.append(FixedPointResult(x, res, linearize(model, x), ok, its))
    return found


# -- gradient propagation -------------------------------------------------------

@dataclass
class GradientReport:
    iterations: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    decay_rates: list = field(default_factory=list)
    max_abs_eig: list = field(default_factory=list)
    probe_every: int = 1
    model: Optional[ElmanRnn] = None
    record: object = None

    @property
    def initial_decay(self) -> float:
        return self.decay_rates[0]

    @property
    def final_decay(self) -> float:
        return self.decay_rates[-1]

    def collapse_iteration(self, threshold: float = 0.1) -> Optional[int]:
        """First probe whose decay rate is below ``threshold``."""
        for it, r in zip(self.iterations, self.decay_rates):
            if r < threshold:
                return it
        return None

    def crossing_iteration(self) -> Optional[int]:
        """First probe with spectral radius of ``W_hh`` above 1."""
        for it, lam in zip(self.iterations, self.max_abs_eig):
            if lam > 1.0:
                return it
        return None

    def rows(self) -> list[dict]:
        out = []
        for it, nrm, rate, lam in zip(self.iterations, self.norms, self.decay_rates, self.max_abs_eig):
            row = {"iteration": it, "decay_rate": rate, "max_abs_eig": lam}
            row.update({f"grad_u{t + 1}": float(v) for t, v in enumerate(nrm)})
            out.append(row)
        return out


def gradient_study(task: HdsSpec, cfg: TrainConfig, probe_every: int = 250, tau=None,
                   cost: str = "sensitivity", probe_seed=None) -> GradientReport:
    """Train while probing input gradients on one held-out trajectory.

    The probe loss window defaults to the first full recall cycle,
    ``s+1..2s``, where every input is read out exactly once.
    """
    if probe_every < 1:
        raise ValueError("probe_every must be positive")
    s = task.s
    tau = list(range(s + 1, 2 * s + 1)) if tau is None else tau
    last = max(np.atleast_1d(tau))
    probe_seed = [cfg.seed, 104729] if probe_seed is None else probe_seed
    traj = generate_trajectory(task, probe_seed, max(int(last), s + 1))
    report = GradientReport(probe_every=probe_every)

    def probe(i: int, model: ElmanRnn) -> None:
        if i % probe_every and i != cfg.iterations:
            return
        g = input_gradients(model, traj.inputs, traj.targets, tau, cost)
        report.iterations.append(i)
        report.norms.append(g.norms)
        report.decay_rates.append(g.decay_rate)
        report.max_abs_eig.append(spectral_radius(model.W_hh))

    model, record = bptt_train(task, cfg, callback=probe)
    record.probes = report.rows()
    report.model, report.record = model, record
    return report
