"""Two-loop recursion against a dense-matrix oracle, plus state mechanics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statealign.errors import InvalidConfig, NonInsertEvent
from statealign.olbfgs import (
    CurvaturePair,
    MemoryState,
    OptimizerState,
    StepConfig,
    advance,
    config_digest,
    direct_memory_mass,
    initial_state,
    replay,
    restore,
    snapshot,
    step,
    two_loop,
)
from statealign.stream import (
    DeletionMode,
    DeletionSet,
    Event,
    EventOp,
    QuadraticSample,
    StreamConfig,
    generate_stream,
)


def dense_inverse_hessian(memory: MemoryState) -> np.ndarray:
    """Brute-force inverse-Hessian estimate built by the textbook recursion.

    Starts from gamma * I and applies every stored pair oldest to newest:
    M <- (I - rho s y^T) M (I - rho y s^T) + rho s s^T.
    """
    d = memory.pairs[0].s.size
    if memory.gamma_mode == "newest_pair" and memory.pairs:
        newest = memory.pairs[-1]
        gamma = float(newest.s @ newest.y) / float(newest.y @ newest.y)
    else:
        gamma = memory.gamma0
    m = gamma * np.eye(d)
    for p in memory.pairs:
        rho = 1.0 / float(p.s @ p.y)
        left = np.eye(d) - rho * np.outer(p.s, p.y)
        m = left @ m @ left.T + rho * np.outer(p.s, p.s)
    return m


def random_memory(rng, d, n_pairs, tau=8, gamma_mode="newest_pair"):
    mem = MemoryState(tau=tau, gamma0=1.0, gamma_mode=gamma_mode)
    made = 0
    t = 0
    while made < n_pairs:
        t += 1
        s = rng.normal(size=d)
        y = rng.normal(size=d)
        if float(s @ y) <= 1e-3:
            continue
        mem.push(CurvaturePair(s=s, y=y, sources=frozenset({t}), created_at=t))
        made += 1
    return mem


def test_two_loop_matches_dense_oracle_random_cases():
    rng = np.random.default_rng(42)
    for _ in range(30):
        d = int(rng.integers(1, 7))
        n = int(rng.integers(0, 6))
        mem = random_memory(rng, d, n)
        q = rng.normal(size=d)
        got = two_loop(mem, q)
        if n == 0:
            np.testing.assert_array_equal(got, q)
        else:
            want = dense_inverse_hessian(mem) @ q
            np.testing.assert_allclose(got, want, atol=1e-11)


def test_two_loop_single_pair_is_exact_newton_in_1d():
    # pair (s, h*s) encodes curvature h; the recursion must return q / h
    h = 3.7
    s = np.array([0.9])
    mem = MemoryState(tau=4, gamma0=1.0, gamma_mode="newest_pair")
    mem.push(CurvaturePair(s=s, y=h * s, sources=frozenset({1}), created_at=1))
    q = np.array([2.0])
    np.testing.assert_allclose(two_loop(mem, q), q / h, rtol=1e-14)


def test_two_loop_empty_memory_scales_by_gamma0():
    mem = MemoryState(tau=4, gamma0=0.25, gamma_mode="constant")
    q = np.array([1.0, -2.0])
    np.testing.assert_array_equal(two_loop(mem, q), 0.25 * q)

    unit = MemoryState(tau=4, gamma0=1.0, gamma_mode="newest_pair")
    np.testing.assert_array_equal(two_loop(unit, q), q)


def test_two_loop_batched_equals_columnwise():
    rng = np.random.default_rng(7)
    mem = random_memory(rng, 5, 4)
    qmat = rng.normal(size=(5, 6))
    batched = two_loop(mem, qmat)
    for j in range(6):
        np.testing.assert_allclose(batched[:, j], two_loop(mem, qmat[:, j]), atol=1e-13)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_two_loop_is_linear_in_its_argument(a, b):
    rng = np.random.default_rng(11)
    mem = random_memory(rng, 4, 3)
    q1 = rng.normal(size=4)
    q2 = rng.normal(size=4)
    lhs = two_loop(mem, a * q1 + b * q2)
    rhs = a * two_loop(mem, q1) + b * two_loop(mem, q2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_two_loop_preserves_positive_definiteness():
    rng = np.random.default_rng(3)
    for _ in range(20):
        mem = random_memory(rng, 4, 4)
        q = rng.normal(size=4)
        assert float(q @ two_loop(mem, q)) > 0.0


# -- memory mechanics --------------------------------------------------------

def test_memory_evicts_oldest_beyond_tau():
    rng = np.random.default_rng(0)
    mem = random_memory(rng, 3, 5, tau=3)
    assert len(mem.pairs) == 3
    assert [p.created_at for p in mem.pairs] == sorted(p.created_at for p in mem.pairs)


def test_direct_memory_mass_counts_source_overlap():
    mem = MemoryState(tau=4, gamma0=1.0, gamma_mode="newest_pair")
    for t in range(1, 5):
        s = np.array([1.0, float(t)])
        mem.push(CurvaturePair(s=s, y=s, sources=frozenset({t}), created_at=t))
    ds = DeletionSet(indices=frozenset({2, 4, 9}), requested_at=5, mode=DeletionMode.RANDOM)
    assert direct_memory_mass(mem, ds) == 2
    empty = DeletionSet(indices=frozenset(), requested_at=5, mode=DeletionMode.RANDOM)
    assert direct_memory_mass(mem, empty) == 0


def test_step_config_validation():
    with pytest.raises(InvalidConfig):
        StepConfig(eta=0.0)
    with pytest.raises(InvalidConfig):
        StepConfig(tau=0)
    with pytest.raises(InvalidConfig):
        StepConfig(gamma_mode="other")


# -- advancing ----------------------------------------------------------------

CFG = StepConfig(eta=0.1, tau=5)
STREAM_CFG = StreamConfig(dimension=6, length=40, deletion_time=20, horizon=10)


def test_advance_accepts_pair_and_tracks_provenance():
    strm = generate_stream(STREAM_CFG, seed=1)
    state = initial_state(6, CFG)
    state, info = advance(state, strm.events[0], CFG)
    assert info.pair_accepted
    assert state.step == 1
    newest = state.memory.pairs[-1]
    assert newest.sources == frozenset({strm.events[0].index})
    assert newest.created_at == 1


def test_advance_rejects_flat_curvature():
    # zero Hessian gives zero gradient, so s = 0 and the pair must be refused
    flat = Event(
        op=EventOp.INSERT, index=1, time=1,
        payload=QuadraticSample(hessian=np.zeros((2, 2)), minimizer=np.zeros(2)),
    )
    state = initial_state(2, StepConfig(eta=0.1, tau=3))
    state2, info = advance(state, flat, StepConfig(eta=0.1, tau=3))
    assert not info.pair_accepted
    assert len(state2.memory.pairs) == 0
    np.testing.assert_array_equal(state2.w, state.w)


def test_step_returns_advanced_state_only():
    strm = generate_stream(STREAM_CFG, seed=2)
    state = initial_state(6, CFG)
    via_advance, _ = advance(state, strm.events[0], CFG)
    via_step = step(state, strm.events[0], CFG)
    np.testing.assert_array_equal(via_advance.w, via_step.w)
    assert via_advance.step == via_step.step


def test_advance_refuses_non_insert_events():
    state = initial_state(3, CFG)
    ghost = Event(op=EventOp.DELETE, index=4, time=4)
    with pytest.raises(NonInsertEvent):
        advance(state, ghost, CFG)


def test_replay_is_deterministic_and_order_sensitive():
    strm = generate_stream(STREAM_CFG, seed=5)
    events = strm.prefix(20)
    a = replay(initial_state(6, CFG), events, CFG)
    b = replay(initial_state(6, CFG), events, CFG)
    np.testing.assert_array_equal(a.w, b.w)
    assert a.step == b.step == 20

    reordered = [events[1], events[0], *events[2:]]
    c = replay(initial_state(6, CFG), reordered, CFG)
    assert not np.array_equal(a.w, c.w)


def test_replay_descent_on_static_quadratic():
    cfg = StreamConfig(
        dimension=6, length=40, deletion_time=20, horizon=10,
        drift_amplitude=0.0, drift_noise=0.0, center_scale=1.0,
    )
    strm = generate_stream(cfg, seed=3)
    state = initial_state(6, CFG)
    target = strm.events[0].payload.minimizer
    start_gap = float(np.linalg.norm(state.w - target))
    end = replay(state, list(strm.events), CFG)
    assert float(np.linalg.norm(end.w - target)) < 0.02 * start_gap


# -- snapshots ----------------------------------------------------------------

def test_snapshot_roundtrip_is_bit_exact():
    strm = generate_stream(STREAM_CFG, seed=9)
    cfg = StepConfig(eta=0.1, tau=4)
    state = replay(initial_state(6, cfg), strm.prefix(15), cfg)
    text = snapshot(state, cfg)
    back = restore(text)
    assert back.step == state.step
    np.testing.assert_array_equal(back.w, state.w)
    np.testing.assert_array_equal(back.prev_grad, state.prev_grad)
    assert len(back.memory.pairs) == len(state.memory.pairs)
    for p, q in zip(state.memory.pairs, back.memory.pairs):
        np.testing.assert_array_equal(p.s, q.s)
        np.testing.assert_array_equal(p.y, q.y)
        assert p.sources == q.sources
        assert p.created_at == q.created_at


def test_clone_isolates_mutation():
    strm = generate_stream(STREAM_CFG, seed=9)
    state = replay(initial_state(6, CFG), strm.prefix(5), CFG)
    twin = state.clone()
    twin.w[0] += 1.0
    assert state.w[0] != twin.w[0]
    twin.memory.pairs.clear()
    assert len(state.memory.pairs) > 0


def test_config_digest_is_stable_and_sensitive():
    a = config_digest(StepConfig(eta=0.1, tau=5))
    b = config_digest(StepConfig(eta=0.1, tau=5))
    c = config_digest(StepConfig(eta=0.2, tau=5))
    assert a == b
    assert a != c
    assert len(a) == 16
    int(a, 16)
