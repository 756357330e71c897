"""Elman RNN trained with hand-written BPTT and Adam.

The network sees the task's ``s`` input vectors, then runs without input;
its outputs during that second phase are scored against the task targets.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .hds import BINARY, HdsSpec, generate_batch
from .numerics import spectral_radius

PARAM_NAMES = ("W_hh", "W_uh", "W_r", "b")


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, record: "TrainRecord"):
        super().__init__(f"loss became non-finite at iteration {iteration}")
        self.iteration = iteration
        self.record = record


@dataclass
class ElmanRnn:
    W_hh: np.ndarray
    W_uh: np.ndarray
    W_r: np.ndarray
    b: np.ndarray
    use_bias: bool = False

    def __post_init__(self):
        self.W_hh = np.asarray(self.W_hh, dtype=np.float64)
        self.W_uh = np.asarray(self.W_uh, dtype=np.float64)
        self.W_r = np.asarray(self.W_r, dtype=np.float64)
        self.b = np.zeros(self.n) if self.b is None else np.asarray(self.b, dtype=np.float64)
        n, d = self.n, self.d
        if self.W_hh.shape != (n, n) or self.W_uh.shape != (n, d) or self.W_r.shape != (d, n):
            raise ValueError(
                f"inconsistent shapes W_hh{self.W_hh.shape} W_uh{self.W_uh.shape} W_r{self.W_r.shape}"
            )
        if self.b.shape != (n,):
            raise ValueError("bias must have length n")
        if not self.use_bias and np.any(self.b != 0):
            raise ValueError("bias disabled but non-zero")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def n(self) -> int:
        return self.W_hh.shape[0]

    @property
    def d(self) -> int:
        return self.W_uh.shape[1]

    @property
    def h0(self) -> np.ndarray:
        return np.zeros(self.n)

    @classmethod
    def init(cls, n: int, d: int, rng: np.random.Generator, scheme: str = "uniform",
             bias: bool = False) -> "ElmanRnn":
        """``uniform``: entries on ``[-1/sqrt(n), 1/sqrt(n)]``; ``gaussian``: variance ``1/n``."""
        if scheme == "uniform":
            k = 1.0 / math.sqrt(n)
            draw = lambda shape: rng.uniform(-k, k, size=shape)
        elif scheme == "gaussian":
            draw = lambda shape: rng.normal(0.0, 1.0 / math.sqrt(n), size=shape)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        W_hh = draw((n, n))
        W_uh = draw((n, d))
        W_r = draw((d, n))
        b = draw((n,)) if bias else np.zeros(n)
        return cls(W_hh, W_uh, W_r, b, bias)

    def params(self) -> dict[str, np.ndarray]:
        names = PARAM_NAMES if self.use_bias else PARAM_NAMES[:3]
        return {k: getattr(self, k) for k in names}

    def copy(self) -> "ElmanRnn":
        return ElmanRnn(self.W_hh.copy(), self.W_uh.copy(), self.W_r.copy(), self.b.copy(), self.use_bias)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"W_hh": self.W_hh, "W_uh": self.W_uh, "W_r": self.W_r, "b": self.b,
                "use_bias": np.array([1.0 if self.use_bias else 0.0])}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "ElmanRnn":
        use_bias = bool(arrays.get("use_bias", np.zeros(1))[0])
        return cls(arrays["W_hh"], arrays["W_uh"], arrays["W_r"], arrays.get("b"), use_bias)


def _batched(inputs: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    u = np.asarray(inputs, dtype=np.float64)
    single = u.ndim == 2
    if single:
        u = u[None]
    if u.ndim != 3 or u.shape[2] != d:
        raise ValueError(f"inputs must be (s, {d}) or (batch, s, {d}), got {np.shape(inputs)}")
    return u, single


def forward(model: ElmanRnn, inputs, horizon: int):
    """Run ``horizon`` steps; inputs are applied for the first ``s`` and are zero after.

    Returns hidden states and outputs for ``t = 1..horizon``. Batched inputs
    ``(B, s, d)`` give ``(B, T, n)`` / ``(B, T, d)``; unbatched ``(s, d)``
    inputs give ``(T, n)`` / ``(T, d)``.
    """
    u, single = _batched(inputs, model.d)
    B, s, _ = u.shape
    if s > horizon:
        raise ValueError(f"input phase ({s}) longer than horizon ({horizon})")
    H = np.empty((B, horizon, model.n))
    drive = u @ model.W_uh.T + model.b
    h = np.zeros((B, model.n))
    WT = model.W_hh.T
    for t in range(horizon):
        pre = h @ WT
        pre += drive[:, t] if t < s else model.b
        h = np.tanh(pre)
        H[:, t] = h
    Y = H @ model.W_r.T
    if single:
        return H[0], Y[0]
    return H, Y


def backward(model: ElmanRnn, inputs: np.ndarray, H: np.ndarray, dY: np.ndarray):
    """Gradients of ``sum(dY * Y)`` with respect to parameters and inputs.

    ``inputs`` ``(B, s, d)``, ``H`` ``(B, T, n)``, ``dY`` ``(B, T, d)``.
    """
    B, T, n = H.shape
    s = inputs.shape[1]
    dH_out = dY @ model.W_r
    dpre = np.empty_like(H)
    carry = np.zeros((B, n))
    W = model.W_hh
    for t in range(T - 1, -1, -1):
        dh = dH_out[:, t] + carry
        dp = dh * (1.0 - H[:, t] ** 2)
        dpre[:, t] = dp
        carry = dp @ W
    H_prev = np.concatenate([np.zeros((B, 1, n)), H[:, :-1]], axis=1)
    grads = {
        "W_hh": dpre.reshape(-1, n).T @ H_prev.reshape(-1, n),
        "W_uh": dpre[:, :s].reshape(-1, n).T @ inputs.reshape(-1, model.d),
        "W_r": dY.reshape(-1, model.d).T @ H.reshape(-1, n),
    }
    if model.use_bias:
        grads["b"] = dpre.sum(axis=(0, 1))
    du = dpre[:, :s] @ model.W_uh
    return grads, du


def mse_loss(model: ElmanRnn, inputs, targets):
    """Mean squared error over the output phase and its gradients.

    ``targets`` is ``(B, H, d)`` for output steps ``s+1..s+H``. Returns
    ``(loss, grads, per_step_loss)`` where ``per_step_loss`` has length ``H``.
    """
    u, _ = _batched(inputs, model.d)
    tgt = np.asarray(targets, dtype=np.float64).reshape(u.shape[0], -1, model.d)
    s, horizon = u.shape[1], tgt.shape[1]
    H, Y = forward(model, u, s + horizon)
    err = Y[:, s:] - tgt
    sq = err ** 2
    loss = float(sq.mean())
    dY = np.zeros_like(Y)
    dY[:, s:] = 2.0 * err / err.size
    grads, _ = backward(model, u, H, dY)
    return loss, grads, sq.mean(axis=(0, 2))


def clip_by_global_norm(grads: dict, threshold: float) -> float:
    """Scale ``grads`` in place to global norm at most ``threshold``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > threshold:
        scale = threshold / total
        for g in grads.values():
            g *= scale
    return total


class Adam:
    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.betas
        for k, p in params.items():
            g = grads[k]
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m.setdefault(k, np.zeros_like(p))
            v = self.v.setdefault(k, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 128
    lr: float = 1e-3
    batch_size: int = 64
    iterations: int = 45000
    l2: float = 0.0
    clip: float = 1.0
    h0: int = 10
    hmax: int = 100
    gamma: float = 1.2
    epsilon: float = 3e-2
    loss_decay: float = 0.98
    init: str = "uniform"
    bias: bool = False
    seed: int = 0
    eig_every: int = 250

    def __post_init__(self):
        for name in ("hidden", "batch_size", "h0", "hmax", "eig_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.l2 < 0:
            raise ValueError("iterations and l2 must be non-negative")
        if not (self.lr > 0 and self.clip > 0 and self.epsilon > 0):
            raise ValueError("lr, clip and epsilon must be positive")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if self.h0 > self.hmax:
            raise ValueError("h0 must not exceed hmax")
        if not 0 < self.loss_decay < 1:
            raise ValueError("loss_decay must be in (0, 1)")
        if self.init not in ("uniform", "gaussian"):
            raise ValueError(f"unknown init scheme {self.init!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# quick single-core settings and the full-size reference settings for repeat copy
DESK = dict(hidden=64, iterations=10000, hmax=36)
FULL = dict(hidden=128, iterations=45000, hmax=100)


class HorizonCurriculum:
    """Output-phase length adapted from a running per-step loss.

    The horizon grows by ``gamma`` when the running loss of every step up to
    the current horizon is at most ``epsilon`` and shrinks by ``gamma``
    otherwise, clamped to ``[h0, hmax]``. The running loss is an exponential
    average with factor ``decay`` per batch.
    """

    def __init__(self, h0: int, hmax: int, gamma: float, epsilon: float, decay: float):
        self.h0, self.hmax = float(h0), float(hmax)
        self.gamma, self.epsilon, self.decay = gamma, epsilon, decay
        self.value = float(h0)
        self.loss_by_step = np.full(int(hmax), np.nan)

    @property
    def horizon(self) -> int:
        return int(round(self.value))

    def update(self, per_step_loss: np.ndarray) -> float:
        k = len(per_step_loss)
        cur = self.loss_by_step[:k]
        fresh = np.isnan(cur)
        cur[fresh] = per_step_loss[fresh]
        cur[~fresh] = self.decay * cur[~fresh] + (1 - self.decay) * per_step_loss[~fresh]
        if np.all(self.loss_by_step[: self.horizon] <= self.epsilon):
            self.value = min(self.value * self.gamma, self.hmax)
        else:
            self.value = max(self.value / self.gamma, self.h0)
        return self.value


@dataclass
class TrainRecord:
    losses: list = field(default_factory=list)
    horizons: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    eig_iterations: list = field(default_factory=list)
    max_abs_eig: list = field(default_factory=list)
    loss_by_step: np.ndarray = field(default_factory=lambda: np.zeros(0))
    probes: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.losses)

    def rows(self) -> list[dict]:
        out = []
        for it, lam in zip(self.eig_iterations, self.max_abs_eig):
            idx = min(it, len(self.losses)) - 1
            out.append({
                "iteration": it,
                "loss": self.losses[idx] if idx >= 0 else float("nan"),
                "horizon": self.horizons[idx] if idx >= 0 else float("nan"),
                "max_abs_eig": lam,
            })
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loss", "horizon", "max_abs_eig"])
            for r in self.rows():
                w.writerow([r["iteration"], f"{r['loss']:.17g}", f"{r['horizon']:.17g}",
                            f"{r['max_abs_eig']:.17g}"])


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_ss, data_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(data_ss)


def init_model(task: HdsSpec, cfg: TrainConfig) -> ElmanRnn:
    init_rng, _ = _streams(cfg.seed)
    return ElmanRnn.init(cfg.hidden, task.d, init_rng, cfg.init, cfg.bias)


def bptt_train(task: HdsSpec, cfg: TrainConfig,
               callback: Optional[Callable[[int, ElmanRnn], None]] = None):
    """Train a fresh model on ``task``; returns ``(model, record)``.

    ``callback(i, model)`` runs after ``i`` updates for ``i = 0..iterations``.
    Raises :class:`TrainingDiverged` if the loss stops being finite.
    """
    init_rng, data_rng = _streams(cfg.seed)
    model = ElmanRnn.init(cfg.hidden, task.d, init_rng, cfg.init, cfg.bias)
    opt = Adam(cfg.lr, weight_decay=cfg.l2)
    sched = HorizonCurriculum(cfg.h0, cfg.hmax, cfg.gamma, cfg.epsilon, cfg.loss_decay)
    record = TrainRecord()

    def sample_eig(i: int) -> None:
        record.eig_iterations.append(i)
        record.max_abs_eig.append(spectral_radius(model.W_hh))

    sample_eig(0)
    if callback is not None:
        callback(0, model)
    for i in range(1, cfg.iterations + 1):
        horizon = sched.horizon
        inputs, targets = generate_batch(task, data_rng, cfg.batch_size, task.s + horizon)
        loss, grads, per_step = mse_loss(model, inputs, targets)
        record.losses.append(loss)
        record.horizons.append(horizon)
        if not math.isfinite(loss):
            record.loss_by_step = sched.loss_by_step.copy()
            raise TrainingDiverged(i, record)
        record.grad_norms.append(clip_by_global_norm(grads, cfg.clip))
        opt.step(model.params(), grads)
        sched.update(per_step)
        if i % cfg.eig_every == 0 or i == cfg.iterations:
            sample_eig(i)
        if callback is not None:
            callback(i, model)
    record.loss_by_step = sched.loss_by_step.copy()
    return model, record


# -- probes -------------------------------------------------------------------

@dataclass(frozen=True)
class InputGradients:
    norms: np.ndarray
    decay_rate: float


def decay_rate(norms: np.ndarray) -> float:
    """Least-squares exponential decay of ``norms[t-1]`` against input age ``s+1-t``.

    Positive when older inputs get smaller gradients. Zero norms are skipped;
    ``nan`` if fewer than two remain.
    """
    norms = np.asarray(norms, dtype=np.float64)
    s = len(norms)
    age = s - np.arange(s, dtype=np.float64)
    keep = norms > 0
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(age[keep], np.log(norms[keep]), 1)[0]
    return float(-slope)


def _tau_list(tau, s: int) -> list[int]:
    taus = [s + 1] if tau is None else [int(tau)] if np.isscalar(tau) else [int(t) for t in tau]
    if not taus or min(taus) < 1:
        raise ValueError(f"loss timesteps {taus} out of range")
    return sorted(set(taus))


def input_gradients(model: ElmanRnn, inputs, targets=None, tau=None,
                    cost: str = "mse") -> InputGradients:
    """Norms of ``dC/du(t)`` for ``t = 1..s`` by exact BPTT.

    ``tau`` is one loss timestep or a collection of them (1-based, counted
    from the first input; default ``s+1``). With ``cost="mse"`` the cost is
    ``sum_tau ||y(tau) - x(tau)||^2`` and ``targets`` (the output-phase
    targets) are required. With ``cost="sensitivity"`` the squared norm is
    ``sum_tau ||dy(tau)/du(t)||_F^2``, the expected squared gradient norm for a
    cost whose residual at each ``tau`` is standard normal; it stays
    informative after the real residual has been trained away.
    """
    u, single = _batched(inputs, model.d)
    if not single:
        raise ValueError("input_gradients takes a single trajectory")
    s, d = u.shape[1], model.d
    taus = _tau_list(tau, s)
    horizon = max(taus[-1], s)
    H, Y = forward(model, u, horizon)
    if cost == "mse":
        if targets is None:
            raise ValueError("mse cost needs targets")
        tgt = np.asarray(targets, dtype=np.float64).reshape(-1, d)
        if taus[0] <= s or taus[-1] > s + len(tgt):
            raise ValueError(f"mse loss timesteps must lie in {s + 1}..{s + len(tgt)}")
        dY = np.zeros_like(Y)
        for t in taus:
            dY[:, t - 1] = 2.0 * (Y[0, t - 1] - tgt[t - s - 1])
        _, du = backward(model, u, H, dY)
        norms = np.linalg.norm(du[0], axis=1)
    elif cost == "sensitivity":
        k = len(taus) * d
        dY = np.zeros((k, horizon, d))
        for a, t in enumerate(taus):
            dY[a * d + np.arange(d), t - 1, np.arange(d)] = 1.0
        _, du = backward(model, np.repeat(u, k, axis=0), np.repeat(H, k, axis=0), dY)
        norms = np.sqrt(np.sum(du ** 2, axis=(0, 2)))
    else:
        raise ValueError(f"unknown cost {cost!r}")
    return InputGradients(norms, decay_rate(norms))


def accuracy(model: ElmanRnn, task: HdsSpec, n_eval: int, horizon: int, seed,
             per: str = "bit") -> float:
    """Fraction of output-phase signs matching the targets on fresh trajectories.

    ``per="bit"`` scores entries, ``per="vector"`` scores whole output
    vectors. A zero output counts as wrong.
    """
    if task.domain != BINARY:
        raise ValueError("accuracy is defined for binary tasks only")
    rng = np.random.default_rng(seed)
    inputs, targets = generate_batch(task, rng, n_eval, horizon)
    _, Y = forward(model, inputs, horizon)
    hit = np.sign(Y[:, task.s :]) == targets
    if per == "bit":
        return float(hit.mean())
    if per == "vector":
        return float(hit.all(axis=2).mean())
    raise ValueError(f"unknown accuracy mode {per!r}")
