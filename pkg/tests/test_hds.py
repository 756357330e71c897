import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavemem import hds
from wavemem.hds import (BINARY, HdsSpec, LinearBoundary, SelfAttentionBoundary, SignedLinearBoundary,
                         SumBoundary, ZeroPreactivationError)


def test_sum_boundary_fibonacci_step():
    spec = hds.fibonacci(2, 1)
    assert hds.hds_step(spec, [1, 1]).tolist() == [2.0]


def test_zero_linear_boundary():
    spec = HdsSpec(2, 3, LinearBoundary(np.zeros((2, 6))))
    hist = np.random.default_rng(0).normal(size=(3, 2))
    assert not hds.hds_step(spec, hist).any()


def test_signed_sum_of_positives():
    s, d = 4, 3
    spec = HdsSpec(d, s, SignedLinearBoundary(np.tile(np.eye(d), (1, s))), BINARY)
    assert hds.hds_step(spec, np.ones((s, d))).tolist() == [1.0] * d


def test_signed_zero_preactivation_raises():
    spec = HdsSpec(1, 2, SignedLinearBoundary(np.array([[1.0, 1.0]])), BINARY)
    with pytest.raises(ZeroPreactivationError):
        hds.hds_step(spec, [1.0, -1.0])


def test_shape_validation():
    with pytest.raises(ValueError):
        HdsSpec(2, 3, LinearBoundary(np.zeros((2, 5))))
    with pytest.raises(ValueError):
        hds.hds_step(hds.fibonacci(2, 1), [1, 1, 1])
    with pytest.raises(ValueError):
        HdsSpec(1, 2, LinearBoundary(np.array([[2.0, 0.0]])), BINARY)


def test_trajectory_deterministic():
    spec = hds.repeat_copy(4, 3)
    a = hds.generate_trajectory(spec, 42, 20)
    b = hds.generate_trajectory(spec, 42, 20)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)


def test_fibonacci_trajectory_targets():
    spec = hds.fibonacci(2, 1)
    states = hds.rollout(spec, [1, 1], 8)
    assert states[2:, 0].tolist() == [2, 3, 5, 8, 13, 21]


@pytest.mark.parametrize("s,d", [(1, 2), (3, 1), (4, 4), (5, 2)])
def test_repeat_copy_periodic(s, d):
    traj = hds.generate_trajectory(hds.repeat_copy(s, d), 3, 4 * s)
    assert np.array_equal(traj.targets[: 3 * s], np.tile(traj.inputs, (3, 1)))


def test_horizon_must_exceed_s():
    with pytest.raises(ValueError):
        hds.generate_trajectory(hds.repeat_copy(4, 2), 0, 4)


def test_batch_matches_single_rollouts():
    spec = hds.random_compose(3, 4, seed=5)
    inputs, targets = hds.generate_batch(spec, np.random.default_rng(1), 16, 12)
    assert inputs.shape == (16, 3, 4) and targets.shape == (16, 9, 4)
    for u, y in zip(inputs, targets):
        assert np.array_equal(hds.rollout(spec, u, 12)[3:], y)


def test_batch_self_attention_path():
    rng = np.random.default_rng(0)
    b = SelfAttentionBoundary(*(rng.normal(size=(2, 2)) for _ in range(3)))
    spec = HdsSpec(2, 3, b)
    inputs, targets = hds.generate_batch(spec, rng, 4, 7)
    for u, y in zip(inputs, targets):
        assert np.allclose(hds.rollout(spec, u, 7)[3:], y)


def test_fibonacci_reference():
    assert hds.fibonacci_reference([1, 1], 7)[:, 0].tolist() == [1, 1, 2, 3, 5, 8, 13]
    assert not hds.fibonacci_reference(np.zeros((3, 2)), 9).any()
    r = hds.fibonacci_reference([[1, 0], [0, 1]], 4)
    assert r[2].tolist() == [1, 1] and r[3].tolist() == [1, 2]


def test_copy_matrix_lag():
    F = hds.copy_matrix(3, 2, lag=1)
    assert np.array_equal(F[:, 4:], np.eye(2)) and not F[:, :4].any()
    with pytest.raises(ValueError):
        hds.copy_matrix(3, 2, lag=4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_random_compose_never_zero(s, d, seed):
    F = hds.random_compose_matrix(s, d, seed)
    assert np.all(np.count_nonzero(F, axis=1) % 2 == 1)
    spec = hds.compose_copy(F, s, d)
    u = np.random.default_rng(seed).choice([-1.0, 1.0], size=(64, s * d))
    assert np.all(u @ F.T != 0)
    hds.rollout(spec, u[0].reshape(s, d), 3 * s)


def test_make_task_names():
    assert hds.make_task("repeat-copy", 4, 4).name == "repeat-copy"
    assert isinstance(hds.make_task("fibonacci", 2, 1).boundary, SumBoundary)
    with pytest.raises(KeyError):
        hds.make_task("nonsense", 2, 2)


@pytest.mark.parametrize("spec", [
    hds.repeat_copy(3, 2),
    hds.fibonacci(2, 1),
    hds.random_compose(4, 2, 9),
    HdsSpec(2, 3, LinearBoundary(np.arange(12.0).reshape(2, 6))),
    HdsSpec(2, 2, SelfAttentionBoundary(np.eye(2), 2 * np.eye(2), -np.eye(2), 0.5)),
])
def test_task_registry_round_trip(spec):
    back = hds.loads_task(hds.dumps_task(spec))
    assert back.name == spec.name and back.domain == spec.domain and (back.s, back.d) == (spec.s, spec.d)
    hist = np.random.default_rng(0).choice([-1.0, 1.0], size=(spec.s, spec.d))
    assert np.array_equal(hds.hds_step(back, hist), hds.hds_step(spec, hist))


def test_task_registry_rejects_bad_document():
    import jsonschema

    with pytest.raises(jsonschema.ValidationError):
        hds.task_from_dict({"name": "x", "d": 1, "s": 0, "domain": "real", "boundary": {"variant": "sum"}})
    with pytest.raises(ValueError):
        hds.task_from_dict({"name": "x", "d": 1, "s": 2, "domain": "real", "boundary": {"variant": "linear"}})
