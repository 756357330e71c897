"""History-dependent dynamical systems and the task registry.

A history is always an ``(s, d)`` array ordered oldest first: row 0 holds
``x_{i-s}`` and row ``s-1`` holds ``x_{i-1}``. Flattening that array
row-major gives the ``s*d`` vector that linear boundary matrices act on, so
block ``k`` (1-based) of a boundary matrix ``F`` multiplies the state stored
``s+1-k`` steps ago.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from .numerics import as_matrix

REAL = "real"
BINARY = "binary"
MAX_RESAMPLES = 100


class ZeroPreactivationError(ValueError):
    """A signed boundary hit an exact zero, where sign() is undefined."""


@dataclass(frozen=True)
class LinearBoundary:
    F: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", as_matrix(self.F, "F"))

    variant = "linear"

    def matrix(self, s: int, d: int) -> np.ndarray:
        return self.F

    def __call__(self, history: np.ndarray) -> np.ndarray:
        return self.F @ history.reshape(-1)


@dataclass(frozen=True)
class SignedLinearBoundary:
    """``sign(F x)``; refuses exact zero pre-activations."""

    F: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", as_matrix(self.F, "F"))

    variant = "signed_linear"

    def matrix(self, s: int, d: int) -> np.ndarray:
        return self.F

    def __call__(self, history: np.ndarray) -> np.ndarray:
        pre = self.F @ history.reshape(-1)
        if np.any(pre == 0):
            raise ZeroPreactivationError("signed boundary received a zero pre-activation")
        return np.sign(pre)


@dataclass(frozen=True)
class SumBoundary:
    """Generalized Fibonacci: the next state is the sum of the stored ones."""

    variant = "sum"

    def matrix(self, s: int, d: int) -> np.ndarray:
        return np.tile(np.eye(d), (1, s))

    def __call__(self, history: np.ndarray) -> np.ndarray:
        return history.sum(axis=0)


@dataclass(frozen=True)
class SelfAttentionBoundary:
    """Single softmax attention head with the newest state as query.

    The logit of stored state ``h_i`` is ``h_i^T W_K W_Q h_s / temperature``;
    the normalisation runs over the ``s`` stored states.
    """

    W_K: np.ndarray
    W_Q: np.ndarray
    W_V: np.ndarray
    temperature: float = 1.0

    variant = "self_attention"

    def __post_init__(self):
        for name in ("W_K", "W_Q", "W_V"):
            m = as_matrix(getattr(self, name), name)
            if m.shape[0] != m.shape[1] or m.shape != as_matrix(self.W_K).shape:
                raise ValueError("attention matrices must be square with matching size")
            object.__setattr__(self, name, m)
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def d(self) -> int:
        return self.W_K.shape[0]

    def __call__(self, history: np.ndarray) -> np.ndarray:
        logits = history @ (self.W_K @ (self.W_Q @ history[-1])) / self.temperature
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        return weights @ (history @ self.W_V.T)


BoundaryFn = Union[LinearBoundary, SignedLinearBoundary, SumBoundary, SelfAttentionBoundary]
LINEAR_VARIANTS = (LinearBoundary, SignedLinearBoundary, SumBoundary)


@dataclass(frozen=True)
class HdsSpec:
    d: int
    s: int
    boundary: BoundaryFn
    domain: str = REAL
    name: str = "custom"

    def __post_init__(self):
        if self.d < 1 or self.s < 1:
            raise ValueError("d and s must be at least 1")
        if self.domain not in (REAL, BINARY):
            raise ValueError(f"unknown domain {self.domain!r}")
        b = self.boundary
        if isinstance(b, (LinearBoundary, SignedLinearBoundary)):
            if b.F.shape != (self.d, self.s * self.d):
                raise ValueError(f"F must be {self.d}x{self.s * self.d}, got {b.F.shape}")
        elif isinstance(b, SelfAttentionBoundary):
            if b.d != self.d:
                raise ValueError("attention matrices must be d x d")
        elif not isinstance(b, SumBoundary):
            raise TypeError(f"unsupported boundary {type(b).__name__}")
        if self.domain == BINARY and not isinstance(b, SignedLinearBoundary):
            if not (isinstance(b, LinearBoundary) and _sign_preserving(b.F)):
                raise ValueError("binary domain needs a signed boundary or a copying linear one")

    @property
    def is_linear(self) -> bool:
        return isinstance(self.boundary, LINEAR_VARIANTS)

    def boundary_matrix(self) -> np.ndarray:
        if not self.is_linear:
            raise TypeError("boundary has no matrix form")
        return self.boundary.matrix(self.s, self.d)


def _sign_preserving(F: np.ndarray) -> bool:
    # each row a single +-1 entry: maps {-1,1}^sd into {-1,1}^d
    nz = F != 0
    return bool(np.all(nz.sum(axis=1) == 1) and np.all(np.abs(F[nz]) == 1))


@dataclass(frozen=True)
class Trajectory:
    """One realisation: ``s`` inputs followed by ``horizon - s`` targets."""

    inputs: np.ndarray
    targets: np.ndarray
    horizon: int

    @property
    def states(self) -> np.ndarray:
        return np.concatenate([self.inputs, self.targets], axis=0)


def _history(spec: HdsSpec, history) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64)
    if h.ndim == 1 and spec.d == 1:
        h = h[:, None]
    if h.ndim != 2 or h.shape[0] != spec.s:
        raise ValueError(f"history must contain exactly s={spec.s} states")
    if h.shape[1] != spec.d:
        raise ValueError(f"states must have dimension d={spec.d}, got {h.shape[1]}")
    return h


def hds_step(spec: HdsSpec, history) -> np.ndarray:
    """Next state from the last ``s`` states (most recent last)."""
    return np.asarray(spec.boundary(_history(spec, history)), dtype=np.float64)


def rollout(spec: HdsSpec, initial, horizon: int) -> np.ndarray:
    """All states ``x_1..x_horizon`` starting from ``s`` initial states."""
    init = _history(spec, initial)
    if horizon < spec.s:
        raise ValueError("horizon must be at least s")
    states = np.empty((horizon, spec.d))
    states[: spec.s] = init
    for i in range(spec.s, horizon):
        states[i] = spec.boundary(states[i - spec.s : i])
    return states


def sample_inputs(spec: HdsSpec, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    shape = (spec.s, spec.d) if batch is None else (batch, spec.s, spec.d)
    if spec.domain == BINARY:
        return rng.choice(np.array([-1.0, 1.0]), size=shape)
    return rng.uniform(-1.0, 1.0, size=shape)


def generate_trajectory(spec: HdsSpec, seed, horizon: int) -> Trajectory:
    """Sample inputs from ``seed`` and roll the system forward to ``horizon``.

    Inputs whose rollout hits a zero pre-activation of a signed boundary are
    redrawn, at most ``MAX_RESAMPLES`` times.
    """
    if horizon <= spec.s:
        raise ValueError(f"horizon ({horizon}) must exceed s ({spec.s})")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RESAMPLES):
        inputs = sample_inputs(spec, rng)
        try:
            states = rollout(spec, inputs, horizon)
        except ZeroPreactivationError:
            continue
        return Trajectory(inputs, states[spec.s :], horizon)
    raise ZeroPreactivationError(f"no valid inputs after {MAX_RESAMPLES} draws")


def generate_batch(spec: HdsSpec, rng: np.random.Generator, batch: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised batch for linear/sum boundaries: ``(inputs, targets)``.

    ``inputs`` is ``(batch, s, d)``; ``targets`` is ``(batch, horizon - s, d)``.
    Rows hitting a zero signed pre-activation are redrawn.
    """
    if horizon <= spec.s:
        raise ValueError(f"horizon ({horizon}) must exceed s ({spec.s})")
    if not spec.is_linear:
        trajs = [generate_trajectory(spec, rng.integers(2**63), horizon) for _ in range(batch)]
        return np.stack([t.inputs for t in trajs]), np.stack([t.targets for t in trajs])
    F = spec.boundary_matrix()
    signed = isinstance(spec.boundary, SignedLinearBoundary)
    s, d = spec.s, spec.d
    inputs = sample_inputs(spec, rng, batch)
    for _ in range(MAX_RESAMPLES):
        states = np.empty((batch, horizon, d))
        states[:, :s] = inputs
        bad = np.zeros(batch, dtype=bool)
        for i in range(s, horizon):
            pre = states[:, i - s : i].reshape(batch, -1) @ F.T
            if signed:
                bad |= np.any(pre == 0, axis=1)
                pre = np.sign(pre)
            states[:, i] = pre
        if not bad.any():
            return inputs, states[:, s:]
        inputs[bad] = sample_inputs(spec, rng, int(bad.sum()))
    raise ZeroPreactivationError(f"no valid inputs after {MAX_RESAMPLES} draws")


def fibonacci_reference(u, n: int) -> np.ndarray:
    """Generalized Fibonacci ``F_1..F_n``: each term sums the previous ``s``.

    ``u`` holds the ``s`` initial vectors (shape ``(s, d)``; a 1-D input is
    read as ``d = 1``). Plain recursion, kept independent of the wave code.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    s = u.shape[0]
    if n < s:
        raise ValueError(f"n ({n}) must be at least s ({s})")
    terms = [row.copy() for row in u]
    while len(terms) < n:
        acc = np.zeros(u.shape[1])
        for prev in terms[-s:]:
            acc = acc + prev
        terms.append(acc)
    return np.array(terms[:n])


# -- task construction -------------------------------------------------------

def copy_matrix(s: int, d: int, lag: int | None = None) -> np.ndarray:
    """``F`` that copies the state from ``lag`` steps ago (default ``s``)."""
    lag = s if lag is None else lag
    if not 1 <= lag <= s:
        raise ValueError("lag must be in 1..s")
    F = np.zeros((d, s * d))
    block = s - lag
    F[:, block * d : (block + 1) * d] = np.eye(d)
    return F


def repeat_copy(s: int, d: int) -> HdsSpec:
    return HdsSpec(d, s, SignedLinearBoundary(copy_matrix(s, d)), BINARY, "repeat-copy")


def fibonacci(s: int = 2, d: int = 1) -> HdsSpec:
    return HdsSpec(d, s, SumBoundary(), REAL, "fibonacci")


def compose_copy(F, s: int, d: int, name: str = "compose-copy") -> HdsSpec:
    F = as_matrix(F, "F")
    if not np.all(np.isin(F, (-1.0, 0.0, 1.0))):
        raise ValueError("compose-copy matrices take entries in {-1, 0, +1}")
    if np.any(np.all(F == 0, axis=1)):
        raise ValueError("every row of a compose-copy matrix must be non-zero")
    return HdsSpec(d, s, SignedLinearBoundary(F), BINARY, name)


def random_compose_matrix(s: int, d: int, seed, max_terms: int = 3) -> np.ndarray:
    """Seeded ``{-1,0,+1}`` boundary matrix with an odd number of terms per row.

    An odd count of +-1 terms never sums to zero on binary inputs, so the
    signed boundary is always defined.
    """
    rng = np.random.default_rng(seed)
    width = s * d
    odd = [k for k in range(1, min(max_terms, width) + 1) if k % 2 == 1]
    F = np.zeros((d, width))
    for row in range(d):
        k = int(rng.choice(odd))
        cols = rng.choice(width, size=k, replace=False)
        F[row, cols] = rng.choice([-1.0, 1.0], size=k)
    return F


def random_compose(s: int, d: int, seed, max_terms: int = 3) -> HdsSpec:
    return compose_copy(random_compose_matrix(s, d, seed, max_terms), s, d, f"compose-random-{seed}")


BUILTIN_TASKS = ("repeat-copy", "fibonacci", "compose-random")


def make_task(name: str, s: int, d: int, seed: int = 0) -> HdsSpec:
    if name in ("repeat-copy", "T1"):
        return repeat_copy(s, d)
    if name in ("fibonacci", "sum"):
        return fibonacci(s, d)
    if name == "compose-random":
        return random_compose(s, d, seed)
    raise KeyError(f"unknown task {name!r}; built-ins are {', '.join(BUILTIN_TASKS)}")


# -- JSON registry format ----------------------------------------------------

TASK_SCHEMA = {
    "type": "object",
    "required": ["name", "d", "s", "domain", "boundary"],
    "properties": {
        "name": {"type": "string"},
        "d": {"type": "integer", "minimum": 1},
        "s": {"type": "integer", "minimum": 1},
        "domain": {"enum": [REAL, BINARY]},
        "boundary": {
            "type": "object",
            "required": ["variant"],
            "properties": {
                "variant": {"enum": ["linear", "signed_linear", "sum", "self_attention"]},
                "matrix": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "W_K": {"type": "array"},
                "W_Q": {"type": "array"},
                "W_V": {"type": "array"},
                "temperature": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def task_to_dict(spec: HdsSpec) -> dict:
    b = spec.boundary
    boundary: dict = {"variant": b.variant}
    if isinstance(b, (LinearBoundary, SignedLinearBoundary)):
        boundary["matrix"] = b.F.tolist()
    elif isinstance(b, SelfAttentionBoundary):
        boundary.update(W_K=b.W_K.tolist(), W_Q=b.W_Q.tolist(), W_V=b.W_V.tolist(),
                        temperature=b.temperature)
    return {"name": spec.name, "d": spec.d, "s": spec.s, "domain": spec.domain, "boundary": boundary}


def task_from_dict(doc: dict) -> HdsSpec:
    import jsonschema

    jsonschema.validate(doc, TASK_SCHEMA)
    b = doc["boundary"]
    variant = b["variant"]
    if variant in ("linear", "signed_linear"):
        if "matrix" not in b:
            raise ValueError(f"{variant} boundary needs a matrix")
        cls = LinearBoundary if variant == "linear" else SignedLinearBoundary
        boundary = cls(np.array(b["matrix"], dtype=np.float64).reshape(doc["d"], -1))
    elif variant == "sum":
        boundary = SumBoundary()
    else:
        boundary = SelfAttentionBoundary(
            np.array(b["W_K"], float), np.array(b["W_Q"], float), np.array(b["W_V"], float),
            float(b.get("temperature", 1.0)),
        )
    return HdsSpec(doc["d"], doc["s"], boundary, doc["domain"], doc["name"])


def dumps_task(spec: HdsSpec) -> str:
    return json.dumps(task_to_dict(spec), sort_keys=True)


def loads_task(text: str) -> HdsSpec:
    return task_from_dict(json.loads(text))
