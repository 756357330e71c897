import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import attention_head, sliding_window_decoder
from wavemem import hds, twm
from wavemem.hds import HdsSpec, LinearBoundary, SelfAttentionBoundary, SumBoundary
from wavemem.twm import SbcParams, WaveSubstrate

small = st.floats(-3, 3, allow_nan=False)


class ZeroBoundary:
    def __call__(self, history):
        return np.zeros(history.shape[1])


def test_zero_substrate_is_fixed_by_sum():
    sub = twm.twm_step(WaveSubstrate.zeros(3, 2), SumBoundary())
    assert not sub.h.any()


def test_fibonacci_one_step():
    sub = twm.twm_step(WaveSubstrate([[1.0], [1.0]]), SumBoundary())
    assert sub.h[:, 0].tolist() == [1.0, 2.0]


def test_open_boundary_drains():
    h = np.arange(1.0, 7.0).reshape(3, 2)
    sub = twm.twm_step(WaveSubstrate(h), ZeroBoundary())
    assert np.array_equal(sub.h, np.vstack([h[1:], np.zeros((1, 2))]))
    for _ in range(2):
        sub = twm.twm_step(sub, ZeroBoundary())
    assert not sub.h.any()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=small))
def test_open_boundary_activity_non_increasing(h):
    sub = WaveSubstrate(h)
    total = np.abs(h).sum()
    for _ in range(h.shape[0]):
        sub = twm.twm_step(sub, ZeroBoundary())
        assert np.abs(sub.h).sum() <= total
        total = np.abs(sub.h).sum()
    assert not sub.h.any()


def test_substrate_is_read_only():
    sub = WaveSubstrate(np.ones((2, 2)))
    with pytest.raises(ValueError):
        sub.h[0, 0] = 5


def test_column_and_flatten():
    sub = WaveSubstrate(np.arange(6.0).reshape(3, 2))
    assert sub.column(3).tolist() == [4.0, 5.0]
    flat = sub.flatten()
    assert flat[(2 - 1) * 2 + (2 - 1)] == sub.column(2)[1]
    assert np.array_equal(WaveSubstrate.unflatten(flat, 3, 2).h, sub.h)


def test_csv_round_trip(tmp_path):
    h = np.random.default_rng(0).normal(size=(4, 3))
    WaveSubstrate(h).to_csv(tmp_path / "sub.csv")
    assert np.array_equal(WaveSubstrate.from_csv(tmp_path / "sub.csv").h, h)


def test_fibonacci_readout():
    sub, f = twm.twm_from_hds(hds.fibonacci(2, 1), [1, 1])
    assert twm.run(sub, f, 5)[:, 0].tolist() == [2, 3, 5, 8, 13]


def test_repeat_copy_period():
    spec = hds.repeat_copy(4, 3)
    init = np.random.default_rng(1).choice([-1.0, 1.0], size=(4, 3))
    sub, f = twm.twm_from_hds(spec, init)
    out = twm.run(sub, f, 12)
    assert np.array_equal(out, np.tile(init, (3, 1)))


def test_zero_init_linear_stays_zero():
    F = np.random.default_rng(2).normal(size=(2, 6))
    sub, f = twm.twm_from_hds(HdsSpec(2, 3, LinearBoundary(F)), np.zeros((3, 2)))
    assert not twm.run(sub, f, 10).any()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_equivalence_with_hds_rollout(s, d, seed):
    rng = np.random.default_rng(seed)
    spec = HdsSpec(d, s, LinearBoundary(rng.integers(-2, 3, size=(d, s * d)).astype(float)))
    init = rng.integers(-3, 4, size=(s, d)).astype(float)
    sub, f = twm.twm_from_hds(spec, init)
    assert np.array_equal(twm.run(sub, f, 8), hds.rollout(spec, init, s + 8)[s:])


def test_equivalence_self_attention():
    rng = np.random.default_rng(3)
    spec = HdsSpec(3, 4, SelfAttentionBoundary(*(rng.normal(size=(3, 3)) for _ in range(3))))
    init = rng.normal(size=(4, 3))
    sub, f = twm.twm_from_hds(spec, init)
    assert np.abs(twm.run(sub, f, 20) - hds.rollout(spec, init, 24)[4:]).max() <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2))
def test_channel_independence(seed, j):
    rng = np.random.default_rng(seed)
    s, d = 3, 3
    blocks = rng.normal(size=(s, d))
    F = np.zeros((d, s * d))
    for k in range(s):
        F[:, k * d:(k + 1) * d] = np.diag(blocks[k])
    init = rng.normal(size=(s, d))
    bumped = init.copy()
    bumped[:, j] += rng.normal(size=s)
    a = twm.run(WaveSubstrate(init), LinearBoundary(F), 10)
    b = twm.run(WaveSubstrate(bumped), LinearBoundary(F), 10)
    others = [k for k in range(d) if k != j]
    assert np.array_equal(a[:, others], b[:, others])


def test_sbc_identical_columns():
    v = np.array([0.3, -1.2, 2.0])
    p = SbcParams.random(3, 0)
    out = twm.sbc_boundary(WaveSubstrate(np.tile(v, (4, 1))), p)
    assert np.allclose(out, p.W_V @ v, atol=1e-14)


def test_sbc_zero_values():
    p = SbcParams.random(3, 1)
    p = SbcParams(p.W_K, p.W_Q, np.zeros((3, 3)))
    sub = WaveSubstrate(np.random.default_rng(0).normal(size=(4, 3)))
    assert not twm.sbc_boundary(sub, p).any()


def test_sbc_matches_oracle_head():
    rng = np.random.default_rng(4)
    sub = WaveSubstrate(rng.normal(size=(4, 3)))
    p = SbcParams.random(3, 5)
    ref = attention_head(sub.h.tolist(), p.W_K.tolist(), p.W_Q.tolist(), p.W_V.tolist())
    assert np.abs(twm.sbc_boundary(sub, p) - ref).max() <= 1e-12


def test_sbc_dimension_mismatch():
    with pytest.raises(ValueError):
        twm.sbc_boundary(WaveSubstrate(np.zeros((4, 3))), SbcParams.random(2, 0))
    with pytest.raises(ValueError):
        twm.sbc_autoregress(WaveSubstrate(np.zeros((4, 3))), SbcParams.random(3, 0), 0)


def test_sbc_autoregress_single_step():
    sub = WaveSubstrate(np.random.default_rng(6).normal(size=(4, 3)))
    p = SbcParams.random(3, 7)
    assert np.array_equal(twm.sbc_autoregress(sub, p, 1)[0], twm.sbc_boundary(sub, p))


def test_sbc_uniform_attention_is_window_mean():
    init = np.random.default_rng(8).normal(size=(4, 2))
    p = SbcParams(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2))
    out = twm.sbc_autoregress(WaveSubstrate(init), p, 6)
    window = list(init)
    for y in out:
        assert np.allclose(y, np.mean(window[-4:], axis=0), atol=1e-15)
        window.append(y)


def test_sbc_matches_sliding_window_decoder():
    rng = np.random.default_rng(9)
    init = rng.normal(size=(4, 3))
    p = SbcParams.random(3, 10)
    ours = twm.sbc_autoregress(WaveSubstrate(init), p, 100)
    ref = sliding_window_decoder(init, p.W_K.tolist(), p.W_Q.tolist(), p.W_V.tolist(), 100)
    assert np.abs(ours - ref).max() <= 1e-12
