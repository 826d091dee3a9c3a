"""Benchmark environments: hyper-grid, bit sequences, and explicit DAGs.

Every environment exposes the same lazy transition interface (forward and
backward actions over hashable states).  Small instances can additionally be
materialised into dense tables and a :class:`~gfnloss.dag_core.FlowDag`, which
training and exact evaluation use when the state space fits in memory.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections.abc import Hashable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from gfnloss.dag_core import FlowDag, layer_index, validate_dag
from gfnloss.errors import (
    ConfigError,
    CoordinateOutOfRange,
    IncompleteSequence,
    InfeasibleEnumeration,
    MissingReward,
)

MAX_ENUMERABLE_STATES = 200_000

State = Hashable


@dataclass(frozen=True)
class EnvTables:
    """Dense view of an enumerable environment.

    ``next_state[i, a]`` is the index reached by forward action ``a`` from
    state ``i``; ``-1`` marks the stop action and ``-2`` an invalid action.
    ``parent[i, b]`` is the index reached by backward action ``b`` (``-2`` if
    invalid).  ``edge_state``/``edge_action`` align the actions with the CSR
    edge order of ``dag``, whose sink id is ``n_states``.
    """

    states: tuple
    next_state: np.ndarray
    forward_mask: np.ndarray
    parent: np.ndarray
    backward_mask: np.ndarray
    back_action_of: np.ndarray  # [n, A]: backward action at the child undoing forward action a
    forward_action_of: np.ndarray  # [n, B]: forward action at the parent reached by backward action b
    terminable: np.ndarray
    reward: np.ndarray  # terminal reward (0 where not terminable)
    encodings: np.ndarray
    dag: FlowDag
    edge_state: np.ndarray
    edge_action: np.ndarray
    order: np.ndarray  # topological order of state indices
    max_length: int  # most forward actions in a complete trajectory, stop included

    @property
    def n_states(self) -> int:
        return len(self.states)

    @cached_property
    def terminal_indices(self) -> np.ndarray:
        return np.flatnonzero(self.terminable)


class Environment(ABC):
    """Lazy transition structure shared by all environments.

    Forward actions ``0..n_actions-1`` include exactly one stop action
    (:attr:`stop_action`), which moves to the sink.  Backward actions index
    parents.
    """

    n_actions: int
    n_back_actions: int
    stop_action: int
    encoding_dim: int

    @property
    @abstractmethod
    def source(self) -> State: ...

    @abstractmethod
    def forward_mask(self, s: State) -> np.ndarray: ...

    @abstractmethod
    def step(self, s: State, a: int) -> State:
        """Child reached by non-stop action ``a``."""

    @abstractmethod
    def backward_mask(self, s: State) -> np.ndarray: ...

    @abstractmethod
    def back_step(self, s: State, b: int) -> State: ...

    @abstractmethod
    def backward_action(self, parent: State, child: State) -> int: ...

    @abstractmethod
    def reward(self, s: State) -> float:
        """Terminal reward of a terminable state."""

    def intermediate_reward(self, s: State) -> float:
        """Reward extended to every state, used by forward-looking variants."""
        return self.reward(s)

    def terminable(self, s: State) -> bool:
        return bool(self.forward_mask(s)[self.stop_action])

    @abstractmethod
    def encode(self, states: Sequence[State]) -> np.ndarray: ...

    @abstractmethod
    def enumerate_states(self) -> list[State]:
        """All states in a topological order; raises if the space is too large."""

    def children(self, s: State) -> list[tuple[int, State | None]]:
        """``(action, child)`` pairs, with ``None`` standing for the sink."""
        mask = self.forward_mask(s)
        return [(a, None if a == self.stop_action else self.step(s, a)) for a in np.flatnonzero(mask)]

    def parents(self, s: State) -> list[tuple[int, State]]:
        mask = self.backward_mask(s)
        return [(b, self.back_step(s, b)) for b in np.flatnonzero(mask)]

    @cached_property
    def tables(self) -> EnvTables:
        return build_tables(self)

    def index(self, s: State) -> int:
        return self._index_map[s]

    @cached_property
    def _index_map(self) -> dict:
        return {s: i for i, s in enumerate(self.tables.states)}


def build_tables(env: Environment) -> EnvTables:
    states = env.enumerate_states()
    n = len(states)
    index = {s: i for i, s in enumerate(states)}
    A, B = env.n_actions, env.n_back_actions
    nxt = np.full((n, A), -2, dtype=np.int64)
    fmask = np.zeros((n, A), dtype=bool)
    par = np.full((n, B), -2, dtype=np.int64)
    bmask = np.zeros((n, B), dtype=bool)
    back_of = np.full((n, A), -1, dtype=np.int64)
    fwd_of = np.full((n, B), -1, dtype=np.int64)
    term = np.zeros(n, dtype=bool)
    reward = np.zeros(n, dtype=np.float64)
    edges = []
    dag_reward = {}
    for i, s in enumerate(states):
        m = env.forward_mask(s)
        fmask[i] = m
        for a in np.flatnonzero(m):
            if a == env.stop_action:
                nxt[i, a] = -1
                edges.append((i, n))
            else:
                c = env.step(s, a)
                j = index[c]
                nxt[i, a] = j
                b = env.backward_action(s, c)
                back_of[i, a] = b
                fwd_of[j, b] = a
                edges.append((i, j))
        bm = env.backward_mask(s)
        bmask[i] = bm
        for b in np.flatnonzero(bm):
            par[i, b] = index[env.back_step(s, b)]
        if m[env.stop_action]:
            term[i] = True
            reward[i] = env.reward(s)
            dag_reward[i] = reward[i]
    dag = FlowDag.from_edges(edges, source=index[env.source], sink=n, reward=dag_reward, n_states=n + 1)
    indptr, children = dag.csr
    edge_state = np.repeat(np.arange(n + 1, dtype=np.int64), np.diff(indptr))
    edge_action = np.empty(len(children), dtype=np.int64)
    for e, (u, v) in enumerate(zip(edge_state, children)):
        if v == n:
            edge_action[e] = env.stop_action
        else:
            # child ids are unique per parent, so a reverse lookup is exact
            edge_action[e] = int(np.flatnonzero(nxt[u] == v)[0])
    order = np.array([s for s in dag.topological_order if s != n], dtype=np.int64)
    depth = layer_index(dag)[n]
    return EnvTables(
        states=tuple(states),
        next_state=nxt,
        forward_mask=fmask,
        parent=par,
        backward_mask=bmask,
        back_action_of=back_of,
        forward_action_of=fwd_of,
        terminable=term,
        reward=reward,
        encodings=env.encode(states),
        dag=dag,
        edge_state=edge_state,
        edge_action=edge_action,
        order=order,
        max_length=depth,
    )


# ---------------------------------------------------------------- hyper-grid


@dataclass(frozen=True)
class HypergridSpec:
    D: int = 2
    H: int = 8
    R0: float = 1e-4
    R1: float = -9.9e-5
    R2: float = 1.0 - 1e-6

    def __post_init__(self):
        if self.D < 1 or self.H < 1:
            raise ConfigError(f"hyper-grid needs D, H >= 1, got D={self.D}, H={self.H}")
        if not (0 < -self.R1 < self.R0 < self.R2):
            raise ConfigError(f"hyper-grid rewards need 0 < -R1 < R0 < R2, got {self.R0}, {self.R1}, {self.R2}")


def hypergrid_reward(x: Sequence[int], spec: HypergridSpec) -> float:
    if len(x) != spec.D or any(not 0 <= xi < spec.H for xi in x):
        raise CoordinateOutOfRange(f"{tuple(x)} is outside the {spec.D}-dim grid of side {spec.H}")
    # |x/H - 0.5| = m / (2H) with integer m; comparing integers keeps the
    # strict boundaries exact (16/20 - 0.5 rounds above 0.3 in floats)
    m = [abs(2 * xi - spec.H) for xi in x]
    outer = all(2 * mi > spec.H for mi in m)
    ring = all(6 * spec.H < 10 * mi < 8 * spec.H for mi in m)
    return spec.R0 + spec.R1 * outer + spec.R2 * ring


def hypergrid_children(x: Sequence[int], spec: HypergridSpec) -> list[int]:
    """Valid forward actions: increment coordinate ``i`` (action ``i``) or stop (action ``D``)."""
    return [i for i in range(spec.D) if x[i] < spec.H - 1] + [spec.D]


class HypergridEnv(Environment):
    def __init__(self, spec: HypergridSpec):
        self.spec = spec
        self.n_actions = spec.D + 1
        self.n_back_actions = spec.D
        self.stop_action = spec.D
        self.encoding_dim = spec.D * spec.H

    @property
    def source(self):
        return (0,) * self.spec.D

    def forward_mask(self, s):
        m = np.zeros(self.n_actions, dtype=bool)
        m[hypergrid_children(s, self.spec)] = True
        return m

    def step(self, s, a):
        return s[:a] + (s[a] + 1,) + s[a + 1 :]

    def backward_mask(self, s):
        return np.array([xi > 0 for xi in s], dtype=bool)

    def back_step(self, s, b):
        return s[:b] + (s[b] - 1,) + s[b + 1 :]

    def backward_action(self, parent, child):
        return next(i for i in range(self.spec.D) if child[i] != parent[i])

    def reward(self, s):
        return hypergrid_reward(s, self.spec)

    def encode(self, states):
        states = np.asarray(states, dtype=np.int64).reshape(-1, self.spec.D)
        out = np.zeros((len(states), self.encoding_dim), dtype=np.float64)
        cols = states + np.arange(self.spec.D) * self.spec.H
        np.put_along_axis(out, cols, 1.0, axis=1)
        return out

    def enumerate_states(self):
        n = self.spec.H**self.spec.D
        if n > MAX_ENUMERABLE_STATES:
            raise InfeasibleEnumeration(f"hyper-grid has {n} cells")
        grid = np.indices((self.spec.H,) * self.spec.D).reshape(self.spec.D, -1).T
        order = np.argsort(grid.sum(axis=1), kind="stable")
        return [tuple(int(v) for v in grid[i]) for i in order]


# ------------------------------------------------------------- bit sequences


@dataclass(frozen=True)
class BitSeqSpec:
    n: int = 12
    k: int = 4
    targets: tuple[int, ...] = field(default=())  # each target is an n-bit integer
    delta: int = 2
    beta: float = 2.0

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.n % self.k:
            raise ConfigError(f"word length k={self.k} must divide n={self.n}")
        if not self.targets:
            raise ConfigError("bit-sequence needs at least one target")
        if any(not 0 <= t < 2**self.n for t in self.targets):
            raise ConfigError(f"targets must be {self.n}-bit integers")
        if self.beta <= 0:
            raise ConfigError(f"reward exponent must be positive, got {self.beta}")

    @property
    def n_words(self) -> int:
        return self.n // self.k


def make_targets(n: int, count: int, rng: np.random.Generator) -> tuple[int, ...]:
    """``count`` distinct uniform ``n``-bit integers."""
    if count > 2**n:
        raise ConfigError(f"cannot draw {count} distinct {n}-bit targets")
    if n <= 62:
        return tuple(int(v) for v in rng.choice(2**n, size=count, replace=False))
    seen: dict[int, None] = {}
    while len(seen) < count:
        bits = rng.integers(0, 2, size=n)
        seen.setdefault(int("".join(map(str, bits)), 2), None)
    return tuple(seen)


def targets_to_hex(targets: Sequence[int], n: int) -> str:
    width = (n + 3) // 4
    return "".join(f"{t:0{width}x}\n" for t in targets)


def targets_from_hex(text: str) -> tuple[int, ...]:
    return tuple(int(line, 16) for line in text.split())


def words_of(x: int, spec: BitSeqSpec) -> tuple[int, ...]:
    """Split an n-bit integer into words, most significant first."""
    mask = 2**spec.k - 1
    return tuple((x >> (spec.k * (spec.n_words - 1 - i))) & mask for i in range(spec.n_words))


def _hamming_words(words: Sequence[int], target: Sequence[int], k: int) -> int:
    return sum(k if w < 0 else (w ^ t).bit_count() for w, t in zip(words, target))


def bitseq_distance(words: Sequence[int], spec: BitSeqSpec) -> int:
    """Minimal Hamming distance to a target; empty words count as ``k`` mismatches."""
    return min(_hamming_words(words, words_of(t, spec), spec.k) for t in spec.targets)


def bitseq_reward(words: Sequence[int], spec: BitSeqSpec) -> float:
    if any(w < 0 for w in words):
        raise IncompleteSequence(f"state {tuple(words)} still has empty words")
    return math.exp(-spec.beta * bitseq_distance(words, spec))


def bitseq_transitions(state: Sequence[int], spec: BitSeqSpec):
    """``(children, parents)`` of a partial sequence; the sink is ``None``."""
    empty = [i for i, w in enumerate(state) if w < 0]
    if not empty:
        children = [None]
    else:
        children = [
            tuple(state[:i]) + (w,) + tuple(state[i + 1 :]) for i in empty for w in range(2**spec.k)
        ]
    parents = [tuple(state[:i]) + (-1,) + tuple(state[i + 1 :]) for i, w in enumerate(state) if w >= 0]
    return children, parents


class BitSeqEnv(Environment):
    """Sequences of ``n/k`` words, filled one word at a time in any order."""

    def __init__(self, spec: BitSeqSpec):
        self.spec = spec
        self.n_words = spec.n_words
        self.vocab = 2**spec.k
        self.n_actions = self.n_words * self.vocab + 1
        self.n_back_actions = self.n_words
        self.stop_action = self.n_words * self.vocab
        self.encoding_dim = self.n_words * (self.vocab + 1)
        self._target_words = np.array([words_of(t, spec) for t in spec.targets], dtype=np.int64)

    @property
    def source(self):
        return (-1,) * self.n_words

    def forward_mask(self, s):
        m = np.zeros(self.n_actions, dtype=bool)
        empty = [i for i, w in enumerate(s) if w < 0]
        if not empty:
            m[self.stop_action] = True
        for i in empty:
            m[i * self.vocab : (i + 1) * self.vocab] = True
        return m

    def step(self, s, a):
        pos, word = divmod(int(a), self.vocab)
        return s[:pos] + (word,) + s[pos + 1 :]

    def backward_mask(self, s):
        return np.array([w >= 0 for w in s], dtype=bool)

    def back_step(self, s, b):
        return s[:b] + (-1,) + s[b + 1 :]

    def backward_action(self, parent, child):
        return next(i for i in range(self.n_words) if parent[i] != child[i])

    def reward(self, s):
        return bitseq_reward(s, self.spec)

    def intermediate_reward(self, s):
        return math.exp(-self.spec.beta * bitseq_distance(s, self.spec))

    def distances(self, words: np.ndarray) -> np.ndarray:
        """Vectorised minimal Hamming distance for an ``[m, n_words]`` array of full sequences."""
        x = words[:, None, :] ^ self._target_words[None, :, :]
        bits = np.zeros(x.shape, dtype=np.int64)
        for b in range(self.spec.k):
            bits += (x >> b) & 1
        return bits.sum(axis=2).min(axis=1)

    def encode(self, states):
        states = np.asarray(states, dtype=np.int64).reshape(-1, self.n_words)
        out = np.zeros((len(states), self.encoding_dim), dtype=np.float64)
        cols = states + 1 + np.arange(self.n_words) * (self.vocab + 1)
        np.put_along_axis(out, cols, 1.0, axis=1)
        return out

    def enumerate_states(self):
        n = (self.vocab + 1) ** self.n_words
        if n > MAX_ENUMERABLE_STATES:
            raise InfeasibleEnumeration(f"bit-sequence space has {n} states")
        grid = np.indices((self.vocab + 1,) * self.n_words).reshape(self.n_words, -1).T - 1
        filled = (grid >= 0).sum(axis=1)
        order = np.argsort(filled, kind="stable")
        return [tuple(int(v) for v in grid[i]) for i in order]


# ---------------------------------------------------------- explicit DAGs


class DagEnv(Environment):
    """An explicit :class:`FlowDag`; action ``a`` picks the ``a``-th child by id."""

    def __init__(self, dag: FlowDag):
        validate_dag(dag)
        self.dag = dag
        self._children = [tuple(c for c in dag.children[s]) for s in range(dag.n_states)]
        self._parents = [tuple(p for p in dag.parents[s]) for s in range(dag.n_states)]
        inner = [s for s in range(dag.n_states) if s != dag.sink]
        self.n_actions = max(len(self._children[s]) for s in inner)
        self.n_back_actions = max([len(self._parents[s]) for s in inner] + [1])
        self.stop_action = -1  # varies per state, see stop_index
        self.encoding_dim = dag.n_states

    @property
    def source(self):
        return self.dag.source

    def stop_index(self, s: int) -> int:
        ch = self._children[s]
        return ch.index(self.dag.sink) if self.dag.sink in ch else -1

    def terminable(self, s):
        return s in self.dag.terminating

    def forward_mask(self, s):
        m = np.zeros(self.n_actions, dtype=bool)
        m[: len(self._children[s])] = True
        return m

    def step(self, s, a):
        return self._children[s][a]

    def backward_mask(self, s):
        m = np.zeros(self.n_back_actions, dtype=bool)
        if s != self.dag.sink:
            m[: len(self._parents[s])] = True
        return m

    def back_step(self, s, b):
        return self._parents[s][b]

    def backward_action(self, parent, child):
        return self._parents[child].index(parent)

    def forward_action(self, parent, child):
        return self._children[parent].index(child)

    def reward(self, s):
        return self.dag.reward[s]

    def intermediate_reward(self, s):
        if s not in self.dag.reward:
            raise MissingReward(f"state {s} carries no reward")
        return self.dag.reward[s]

    def children(self, s):
        return [(a, None if c == self.dag.sink else c) for a, c in enumerate(self._children[s])]

    def encode(self, states):
        states = np.asarray(states, dtype=np.int64).reshape(-1)
        out = np.zeros((len(states), self.encoding_dim), dtype=np.float64)
        out[np.arange(len(states)), states] = 1.0
        return out

    def enumerate_states(self):
        return [s for s in self.dag.topological_order if s != self.dag.sink]

    def index(self, s):
        return int(s)

    @cached_property
    def tables(self) -> EnvTables:
        """Tables indexed by the DAG's own state ids (sink row left invalid)."""
        dag = self.dag
        n = dag.n_states
        A, B = self.n_actions, self.n_back_actions
        nxt = np.full((n, A), -2, dtype=np.int64)
        fmask = np.zeros((n, A), dtype=bool)
        back_of = np.full((n, A), -1, dtype=np.int64)
        fwd_of = np.full((n, B), -1, dtype=np.int64)
        par = np.full((n, B), -2, dtype=np.int64)
        bmask = np.zeros((n, B), dtype=bool)
        term = np.zeros(n, dtype=bool)
        reward = np.zeros(n, dtype=np.float64)
        for s in range(n):
            if s == dag.sink:
                continue
            for a, c in enumerate(self._children[s]):
                fmask[s, a] = True
                if c == dag.sink:
                    nxt[s, a] = -1
                    term[s] = True
                    reward[s] = dag.reward[s]
                else:
                    nxt[s, a] = c
                    back_of[s, a] = self._parents[c].index(s)
            for b, p in enumerate(self._parents[s]):
                bmask[s, b] = True
                par[s, b] = p
                fwd_of[s, b] = self._children[p].index(s)
        indptr, children = dag.csr
        edge_state = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
        edge_action = np.asarray(
            [e - indptr[u] for e, u in enumerate(edge_state)], dtype=np.int64
        )
        order = np.array([s for s in dag.topological_order if s != dag.sink], dtype=np.int64)
        return EnvTables(
            states=tuple(range(n)),
            next_state=nxt,
            forward_mask=fmask,
            parent=par,
            backward_mask=bmask,
            back_action_of=back_of,
            forward_action_of=fwd_of,
            terminable=term,
            reward=reward,
            encodings=self.encode(range(n)),
            dag=dag,
            edge_state=edge_state,
            edge_action=edge_action,
            order=order,
            max_length=layer_index(dag)[dag.sink],
        )


# ------------------------------------------------------- random graded DAGs


@dataclass(frozen=True)
class RandomDagSpec:
    layers: int = 3
    width: int = 3
    edge_density: float = 0.5
    reward_law: str = "uniform"  # uniform | log_uniform
    reward_lo: float = 0.1
    reward_hi: float = 2.0
    terminate_everywhere: bool = False
    skip_density: float = 0.0

    def __post_init__(self):
        if self.layers < 1 or self.width < 1:
            raise ConfigError("random DAG needs layers, width >= 1")
        if not 0.0 <= self.edge_density <= 1.0 or not 0.0 <= self.skip_density <= 1.0:
            raise ConfigError("densities must be probabilities")
        if self.reward_law not in ("uniform", "log_uniform"):
            raise ConfigError(f"unknown reward law {self.reward_law!r}")
        if not 0 < self.reward_lo <= self.reward_hi:
            raise ConfigError("reward bounds need 0 < lo <= hi")


def _draw_reward(spec: RandomDagSpec, rng: np.random.Generator) -> float:
    if spec.reward_law == "uniform":
        return float(rng.uniform(spec.reward_lo, spec.reward_hi))
    return float(math.exp(rng.uniform(math.log(spec.reward_lo), math.log(spec.reward_hi))))


def random_graded_dag(spec: RandomDagSpec, rng: np.random.Generator) -> FlowDag:
    """Layered random DAG: source, ``layers`` layers of ``width`` states, sink.

    Consecutive layers are joined with probability ``edge_density``; a state
    left without a parent or child gets one uniformly random edge.  With
    ``terminate_everywhere`` every state (source included) also links to the
    sink and carries a reward; ``skip_density`` adds layer-skipping edges.
    Either option makes the DAG ungraded.
    """
    L, W = spec.layers, spec.width
    source = 0
    layer_ids = [[1 + i * W + j for j in range(W)] for i in range(L)]
    sink = 1 + L * W
    edges = {(source, v) for v in layer_ids[0]}
    for i in range(L - 1):
        upper, lower = layer_ids[i], layer_ids[i + 1]
        for u in upper:
            for v in lower:
                if rng.random() < spec.edge_density:
                    edges.add((u, v))
        for u in upper:
            if not any((u, v) in edges for v in lower):
                edges.add((u, lower[int(rng.integers(W))]))
        for v in lower:
            if not any((u, v) in edges for u in upper):
                edges.add((upper[int(rng.integers(W))], v))
    if spec.skip_density > 0:
        for i in range(L - 2):
            for u in layer_ids[i]:
                for k in range(i + 2, L):
                    for v in layer_ids[k]:
                        if rng.random() < spec.skip_density:
                            edges.add((u, v))
    reward = {}
    for v in layer_ids[-1]:
        edges.add((v, sink))
        reward[v] = _draw_reward(spec, rng)
    if spec.terminate_everywhere:
        for v in [source] + [s for layer in layer_ids[:-1] for s in layer]:
            edges.add((v, sink))
            reward[v] = _draw_reward(spec, rng)
    dag = FlowDag.from_edges(edges, source, sink, reward, n_states=sink + 1)
    validate_dag(dag)
    return dag


def diamond_dag(rewards: tuple[float, float] = (1.0, 1.0)) -> FlowDag:
    """``source -> {a, b}``, both terminating; handy for examples and tests."""
    return FlowDag.from_edges([(0, 1), (0, 2), (1, 3), (2, 3)], 0, 3, {1: rewards[0], 2: rewards[1]})
