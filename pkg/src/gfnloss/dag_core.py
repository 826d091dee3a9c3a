"""Flow networks as explicit DAGs: validation, enumeration, layering, exact P_T."""

from __future__ import annotations

import graphlib
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from gfnloss import _core
from gfnloss.errors import (
    AllRewardsZero,
    CycleDetected,
    NegativeReward,
    PolicyNotNormalized,
    SinkNotReachable,
    TrajectoryBudgetExceeded,
    UnreachableState,
)

DEFAULT_TRAJECTORY_CAP = 10**6

# A trajectory is the tuple of visited state ids; edges are 2-tuples.
Trajectory = tuple[int, ...]


@dataclass(frozen=True)
class FlowDag:
    """Directed acyclic state graph with a single source and sink.

    States are the dense ids ``0..n_states-1``.  ``reward`` must cover every
    terminating state and may also carry intermediate rewards for other states.
    ``virtual`` lists states inserted by :func:`insert_virtual_states`, and
    ``virtual_origin`` maps each of them to the original edge it subdivides.
    """

    n_states: int
    edges: tuple[tuple[int, int], ...]
    source: int
    sink: int
    reward: Mapping[int, float]
    virtual: frozenset[int] = frozenset()
    virtual_origin: Mapping[int, tuple[int, int]] = field(default_factory=dict)

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[int, int]],
        source: int,
        sink: int,
        reward: Mapping[int, float],
        n_states: int | None = None,
    ) -> FlowDag:
        edges = tuple(sorted({(int(u), int(v)) for u, v in edges}))
        if n_states is None:
            ids = {source, sink}
            for u, v in edges:
                ids.add(u)
                ids.add(v)
            n_states = max(ids) + 1
        return cls(n_states, edges, int(source), int(sink), {int(k): float(v) for k, v in reward.items()})

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n_states)]
        for u, v in self.edges:
            out[u].append(v)
        return tuple(tuple(sorted(c)) for c in out)

    @cached_property
    def parents(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n_states)]
        for u, v in self.edges:
            out[v].append(u)
        return tuple(tuple(sorted(p)) for p in out)

    @cached_property
    def terminating(self) -> frozenset[int]:
        return frozenset(u for u, v in self.edges if v == self.sink)

    @cached_property
    def terminal_list(self) -> tuple[int, ...]:
        return tuple(sorted(self.terminating))

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        ts = graphlib.TopologicalSorter({s: self.parents[s] for s in range(self.n_states)})
        try:
            order = list(ts.static_order())
        except graphlib.CycleError as exc:
            raise CycleDetected(f"cycle through states {exc.args[1]}") from None
        return tuple(order)

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """``(indptr, children)`` arrays with children sorted by state id."""
        indptr = np.zeros(self.n_states + 1, dtype=np.int64)
        for s, ch in enumerate(self.children):
            indptr[s + 1] = indptr[s] + len(ch)
        flat = np.fromiter((c for ch in self.children for c in ch), dtype=np.int64, count=int(indptr[-1]))
        return indptr, flat

    def terminal_reward_vector(self) -> np.ndarray:
        return np.array([self.reward[s] for s in self.terminal_list], dtype=np.float64)

    def is_graded(self) -> bool:
        layer = layer_index(self)
        return all(layer[v] == layer[u] + 1 for u, v in self.edges)

    def to_text(self) -> str:
        lines = [f"dag {self.n_states} {len(self.edges)}", f"source {self.source}", f"sink {self.sink}"]
        lines += [f"edge {u} {v}" for u, v in self.edges]
        lines += [f"reward {s} {self.reward[s]!r}" for s in sorted(self.reward)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> FlowDag:
        n_states = source = sink = None
        edges: list[tuple[int, int]] = []
        reward: dict[int, float] = {}
        for raw in text.splitlines():
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            key = parts[0]
            if key == "dag":
                n_states = int(parts[1])
                n_edges = int(parts[2])
            elif key == "edge":
                edges.append((int(parts[1]), int(parts[2])))
            elif key == "reward":
                reward[int(parts[1])] = float(parts[2])
            elif key == "source":
                source = int(parts[1])
            elif key == "sink":
                sink = int(parts[1])
            else:
                raise ValueError(f"unknown record {key!r} in DAG text")
        if n_states is None or source is None or sink is None:
            raise ValueError("DAG text needs 'dag', 'source' and 'sink' records")
        if len(edges) != n_edges:
            raise ValueError(f"header announces {n_edges} edges, found {len(edges)}")
        return cls.from_edges(edges, source, sink, reward, n_states=n_states)


@dataclass(frozen=True)
class Cut:
    members: frozenset[Trajectory]
    kind: str  # state-layer | edge-layer | partial-trajectory-layer | complete-trajectory


def validate_dag(dag: FlowDag) -> None:
    """Raise if any structural or reward invariant of ``dag`` is violated."""
    order = dag.topological_order  # raises CycleDetected
    seen = {dag.source}
    stack = [dag.source]
    while stack:
        s = stack.pop()
        for c in dag.children[s]:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    missing = set(range(dag.n_states)) - seen
    if missing:
        raise UnreachableState(f"states not reachable from source: {sorted(missing)[:10]}")
    reaches_sink = {dag.sink}
    for s in reversed(order):
        if any(c in reaches_sink for c in dag.children[s]):
            reaches_sink.add(s)
    stuck = set(range(dag.n_states)) - reaches_sink
    if stuck:
        raise SinkNotReachable(f"sink not reachable from states: {sorted(stuck)[:10]}")
    total = 0.0
    for s in dag.terminating:
        r = dag.reward.get(s)
        if r is None or not math.isfinite(r):
            raise NegativeReward(f"terminating state {s} has no finite reward")
        if r < 0:
            raise NegativeReward(f"reward({s}) = {r} < 0")
        total += r
    if total <= 0:
        raise AllRewardsZero("all terminating rewards are zero")


def count_complete_trajectories(dag: FlowDag) -> int:
    paths = [0] * dag.n_states
    paths[dag.source] = 1
    for s in dag.topological_order:
        for c in dag.children[s]:
            paths[c] += paths[s]
    return paths[dag.sink]


def enumerate_complete_trajectories(dag: FlowDag, cap: int = DEFAULT_TRAJECTORY_CAP) -> list[Trajectory]:
    """All source-to-sink paths in lexicographic order of state ids."""
    n = count_complete_trajectories(dag)
    if n > cap:
        raise TrajectoryBudgetExceeded(f"{n} complete trajectories exceed the cap of {cap}")
    out: list[Trajectory] = []
    path = [dag.source]

    def dfs(s: int) -> None:
        if s == dag.sink:
            out.append(tuple(path))
            return
        for c in dag.children[s]:
            path.append(c)
            dfs(c)
            path.pop()

    dfs(dag.source)
    return out


def layer_index(dag: FlowDag) -> dict[int, int]:
    """Length of the longest source-to-``s`` path, for every state."""
    layer = {s: 0 for s in range(dag.n_states)}
    for s in dag.topological_order:
        for c in dag.children[s]:
            if layer[s] + 1 > layer[c]:
                layer[c] = layer[s] + 1
    return layer


def insert_virtual_states(dag: FlowDag) -> FlowDag:
    """Subdivide every edge that skips layers so the result is graded.

    An edge ``u -> v`` with ``l(v) - l(u) = k > 1`` becomes a chain through
    ``k - 1`` new states, appended after the existing ids.  Rewards of the
    original states are kept; virtual states get none.
    """
    layer = layer_index(dag)
    next_id = dag.n_states
    edges: list[tuple[int, int]] = []
    virtual: set[int] = set(dag.virtual)
    origin = dict(dag.virtual_origin)
    for u, v in dag.edges:
        gap = layer[v] - layer[u]
        if gap <= 1:
            edges.append((u, v))
            continue
        prev = u
        for _ in range(gap - 1):
            w = next_id
            next_id += 1
            virtual.add(w)
            origin[w] = (u, v)
            edges.append((prev, w))
            prev = w
        edges.append((prev, v))
    if next_id == dag.n_states:
        return dag
    return FlowDag(
        n_states=next_id,
        edges=tuple(sorted(edges)),
        source=dag.source,
        sink=dag.sink,
        reward=dict(dag.reward),
        virtual=frozenset(virtual),
        virtual_origin=origin,
    )


def contract_virtual(dag: FlowDag, traj: Trajectory) -> Trajectory:
    return tuple(s for s in traj if s not in dag.virtual)


def state_layer_cuts(dag: FlowDag) -> list[Cut]:
    """Cuts ``V^i`` of a graded DAG, one per layer strictly between source and sink."""
    layer = layer_index(dag)
    depth = layer[dag.sink]
    groups: dict[int, set[Trajectory]] = {i: set() for i in range(1, depth)}
    for s, i in layer.items():
        if 0 < i < depth:
            groups[i].add((s,))
    return [Cut(frozenset(groups[i]), "state-layer") for i in range(1, depth)]


def forward_policy_array(dag: FlowDag, forward_policy: Mapping[tuple[int, int], float]) -> np.ndarray:
    """Edge probabilities aligned with ``dag.csr``; checks normalisation."""
    indptr, children = dag.csr
    probs = np.empty(len(children), dtype=np.float64)
    for s in range(dag.n_states):
        lo, hi = indptr[s], indptr[s + 1]
        if s == dag.sink:
            continue
        total = 0.0
        for e in range(lo, hi):
            p = float(forward_policy.get((s, int(children[e])), 0.0))
            if p < 0:
                raise PolicyNotNormalized(f"negative probability at {(s, int(children[e]))}")
            probs[e] = p
            total += p
        if abs(total - 1.0) > 1e-12:
            raise PolicyNotNormalized(f"children of state {s} sum to {total!r}")
    return probs


def terminal_distribution_from_probs(dag: FlowDag, probs: np.ndarray) -> np.ndarray:
    """P_T over ``dag.terminal_list`` given CSR-aligned edge probabilities."""
    indptr, children = dag.csr
    order = np.asarray(dag.topological_order, dtype=np.int64)
    mass = _core.terminal_mass(order, indptr, children, np.ascontiguousarray(probs, dtype=np.float64), dag.source)
    out = np.empty(len(dag.terminal_list), dtype=np.float64)
    for i, s in enumerate(dag.terminal_list):
        lo, hi = indptr[s], indptr[s + 1]
        k = lo + int(np.searchsorted(children[lo:hi], dag.sink))
        out[i] = mass[s] * probs[k]
    return out


def exact_terminal_distribution(
    dag: FlowDag, forward_policy: Mapping[tuple[int, int], float]
) -> dict[int, float]:
    """Terminating probability of every terminating state under ``forward_policy``."""
    probs = forward_policy_array(dag, forward_policy)
    pt = terminal_distribution_from_probs(dag, probs)
    return dict(zip(dag.terminal_list, pt.tolist()))


def sample_terminals(dag: FlowDag, probs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo terminal states of ``n`` forward walks under CSR-aligned ``probs``."""
    indptr, children = dag.csr
    cum = np.empty_like(probs)
    for s in range(dag.n_states):
        lo, hi = indptr[s], indptr[s + 1]
        if hi > lo:
            cum[lo:hi] = np.cumsum(probs[lo:hi])
    max_len = max(layer_index(dag).values()) + 1
    out = np.empty(n, dtype=np.int64)
    chunk = 1 << 16
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        u = rng.random((m, max_len))
        out[start : start + m] = _core.walk(indptr, children, cum, dag.source, dag.sink, u)
    return out
