import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gfnloss.dag_core import count_complete_trajectories, enumerate_complete_trajectories, validate_dag
from gfnloss.envs import (
    BitSeqEnv,
    BitSeqSpec,
    DagEnv,
    HypergridEnv,
    HypergridSpec,
    RandomDagSpec,
    bitseq_distance,
    bitseq_reward,
    bitseq_transitions,
    diamond_dag,
    hypergrid_children,
    hypergrid_reward,
    make_targets,
    random_graded_dag,
    targets_from_hex,
    targets_to_hex,
    words_of,
)
from gfnloss.errors import ConfigError, CoordinateOutOfRange, IncompleteSequence

FULL_GRID = HypergridSpec(D=4, H=20)


# ------------------------------------------------------------- hyper-grid


def test_hypergrid_reward_examples():
    assert hypergrid_reward((10, 10, 10, 10), FULL_GRID) == pytest.approx(1e-4, rel=1e-12)
    assert hypergrid_reward((0, 0, 0, 0), FULL_GRID) == pytest.approx(1e-6, rel=1e-9)
    assert hypergrid_reward((3, 17, 3, 17), FULL_GRID) == pytest.approx(1.0, abs=1e-15)


def test_hypergrid_reward_is_strict_at_boundaries():
    # |x/H - 0.5| = 0.25 exactly at x = 5 (H = 20): the outer indicator is off
    assert hypergrid_reward((5, 5, 5, 5), FULL_GRID) == pytest.approx(1e-4)
    # 0.4 exactly at x = 2: the ring indicator is off
    assert hypergrid_reward((2, 2, 2, 2), FULL_GRID) == pytest.approx(1e-6)


def test_hypergrid_out_of_range():
    with pytest.raises(CoordinateOutOfRange):
        hypergrid_reward((20, 0, 0, 0), FULL_GRID)
    with pytest.raises(CoordinateOutOfRange):
        hypergrid_reward((0, 0, 0), FULL_GRID)


def test_hypergrid_mode_count_at_full_scale():
    grid = np.indices((20,) * 4).reshape(4, -1).T
    r = np.array([hypergrid_reward(tuple(x), FULL_GRID) for x in grid])
    modes = grid[r >= 0.5]
    assert len(modes) == 16
    assert set(modes.ravel().tolist()) == {3, 17}


def test_hypergrid_children():
    assert hypergrid_children((19, 19, 19, 19), FULL_GRID) == [4]
    assert len(hypergrid_children((0, 0, 0, 0), FULL_GRID)) == 5


def test_hypergrid_spec_constraints():
    with pytest.raises(ConfigError):
        HypergridSpec(R0=1e-4, R1=-2e-4)
    with pytest.raises(ConfigError):
        HypergridSpec(D=0)


def test_hypergrid_tables():
    env = HypergridEnv(HypergridSpec(D=2, H=8))
    t = env.tables
    assert t.n_states == 64 and len(t.terminal_indices) == 64
    validate_dag(t.dag)
    modes = {t.states[i] for i in np.flatnonzero(t.reward > 0.5)}
    assert modes == {(1, 1), (1, 7), (7, 1), (7, 7)}
    assert t.encodings.shape == (64, 16) and np.all(t.encodings.sum(axis=1) == 2)
    assert t.max_length == 15  # 14 increments and a stop


# ---------------------------------------------------------- bit sequences


def test_bitseq_reward_examples():
    spec = BitSeqSpec(n=12, k=4, targets=(0b000011110000,), beta=1.0)
    assert bitseq_reward(words_of(0b000011110000, spec), spec) == 1.0
    assert bitseq_reward(words_of(0b000011110001, spec), spec) == pytest.approx(math.exp(-1))
    spec2 = BitSeqSpec(n=12, k=4, targets=(0b000011110000,), beta=2.0)
    assert bitseq_reward(words_of(0b100011110000, spec2), spec2) == pytest.approx(0.135335, abs=1e-6)


def test_bitseq_incomplete():
    spec = BitSeqSpec(targets=(0,))
    with pytest.raises(IncompleteSequence):
        bitseq_reward((-1, 0, 0), spec)


def test_bitseq_spec_errors():
    with pytest.raises(ConfigError):
        BitSeqSpec(n=12, k=5, targets=(0,))
    with pytest.raises(ConfigError):
        BitSeqSpec(targets=())
    with pytest.raises(ConfigError):
        BitSeqSpec(n=4, k=2, targets=(16,))


def test_bitseq_transitions_examples():
    spec = BitSeqSpec(n=16, k=4, targets=(0,))
    children, parents = bitseq_transitions((-1,) * 4, spec)
    assert len(children) == 64 and parents == []
    children, parents = bitseq_transitions((1, 2, 3, 4), spec)
    assert children == [None] and len(parents) == 4
    _, parents = bitseq_transitions((1, -1, 3, 4), spec)
    assert len(parents) == 3


def _brute_distance(x, targets, n):
    return min(bin(x ^ t).count("1") for t in targets)


@given(st.integers(0, 2**12 - 1), st.lists(st.integers(0, 2**12 - 1), min_size=1, max_size=5, unique=True))
def test_bitseq_distance_matches_bitwise_hamming(x, targets):
    spec = BitSeqSpec(n=12, k=4, targets=tuple(targets))
    assert bitseq_distance(words_of(x, spec), spec) == _brute_distance(x, targets, 12)
    env = BitSeqEnv(spec)
    got = env.distances(np.array([words_of(x, spec)]))
    assert int(got[0]) == _brute_distance(x, targets, 12)


@given(st.integers(0, 2**12 - 1), st.permutations(range(3)), st.integers(0, 15))
def test_bitseq_distance_invariant_under_relabelling(x, perm, flip):
    # permuting word positions and xor-ing every word with one mask, in x and M alike
    targets = (0x0F3, 0xA5C)
    spec = BitSeqSpec(n=12, k=4, targets=targets)

    def relabel(v):
        w = words_of(v, spec)
        return tuple(w[p] ^ flip for p in perm)

    relabelled = BitSeqSpec(n=12, k=4, targets=tuple(int("".join(f"{u:04b}" for u in relabel(t)), 2) for t in targets))
    assert bitseq_distance(relabel(x), relabelled) == bitseq_distance(words_of(x, spec), spec)


def test_bitseq_tables_desk_scale():
    env = BitSeqEnv(BitSeqSpec(n=12, k=4, targets=(0, 1)))
    t = env.tables
    assert t.n_states == 17**3
    assert len(t.terminal_indices) == 4096
    assert t.max_length == 4
    assert np.all(t.encodings.sum(axis=1) == 3)


def test_targets_round_trip_and_distinct():
    rng = np.random.default_rng(0)
    ts = make_targets(12, 60, rng)
    assert len(set(ts)) == 60
    assert targets_from_hex(targets_to_hex(ts, 12)) == ts
    big = make_targets(120, 5, rng)
    assert len(set(big)) == 5 and all(0 <= t < 2**120 for t in big)
    with pytest.raises(ConfigError):
        make_targets(2, 5, rng)


def test_bitseq_intermediate_reward_counts_empty_words():
    spec = BitSeqSpec(n=8, k=4, targets=(0,), beta=1.0)
    env = BitSeqEnv(spec)
    assert env.intermediate_reward((-1, 0)) == pytest.approx(math.exp(-4))


# -------------------------------------------------------------- random DAGs


def test_single_chain():
    dag = random_graded_dag(RandomDagSpec(layers=1, width=1), np.random.default_rng(0))
    assert dag.edges == ((0, 1), (1, 2))


@pytest.mark.parametrize("layers, width", [(1, 3), (2, 2), (3, 3), (4, 2)])
def test_complete_layered_count(layers, width):
    dag = random_graded_dag(RandomDagSpec(layers=layers, width=width, edge_density=1.0), np.random.default_rng(1))
    assert count_complete_trajectories(dag) == width ** (layers - 1) * width
    assert len(enumerate_complete_trajectories(dag)) == width**layers


@given(st.integers(1, 5), st.integers(1, 4), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_random_dag_is_valid_and_graded(layers, width, density, seed):
    dag = random_graded_dag(RandomDagSpec(layers=layers, width=width, edge_density=density), np.random.default_rng(seed))
    validate_dag(dag)
    assert dag.is_graded()
    assert all(dag.reward[s] > 0 for s in dag.terminating)


def test_random_dag_spec_errors():
    for kw in ({"layers": 0}, {"edge_density": 1.5}, {"reward_law": "gamma"}, {"reward_lo": 0.0}):
        with pytest.raises(ConfigError):
            RandomDagSpec(**kw)


# ------------------------------------------- lazy queries vs materialised DAG


@pytest.mark.parametrize(
    "env",
    [
        HypergridEnv(HypergridSpec(D=2, H=4)),
        HypergridEnv(HypergridSpec(D=3, H=3)),
        BitSeqEnv(BitSeqSpec(n=6, k=2, targets=(5, 40))),
        DagEnv(diamond_dag((1.0, 2.0))),
        DagEnv(random_graded_dag(RandomDagSpec(terminate_everywhere=True), np.random.default_rng(3))),
    ],
    ids=["grid2x4", "grid3x3", "bits6", "diamond", "random"],
)
def test_lazy_queries_agree_with_tables(env):
    t = env.tables
    sink = t.dag.sink
    for i, s in enumerate(t.states):
        if isinstance(env, DagEnv) and s == sink:
            continue
        lazy_children = set()
        for a in np.flatnonzero(env.forward_mask(s)):
            lazy_children.add(sink if a == env.stop_action or (isinstance(env, DagEnv) and env.step(s, a) == sink)
                              else env.index(env.step(s, a)))
        assert lazy_children == set(t.dag.children[env.index(s)])
        lazy_parents = {env.index(env.back_step(s, b)) for b in np.flatnonzero(env.backward_mask(s))}
        assert lazy_parents == set(t.dag.parents[env.index(s)])
        if env.terminable(s):
            assert t.reward[env.index(s)] == env.reward(s)
    validate_dag(t.dag)


def test_tables_action_round_trip():
    env = HypergridEnv(HypergridSpec(D=3, H=3))
    t = env.tables
    for i, j in itertools.product(range(t.n_states), range(env.n_actions)):
        c = t.next_state[i, j]
        if c >= 0:
            b = t.back_action_of[i, j]
            assert t.parent[c, b] == i and t.forward_action_of[c, b] == j
