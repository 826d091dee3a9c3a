"""Forward (on-policy, epsilon-noisy, tempered) and backward trajectory sampling."""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np
import torch

from gfnloss.dag_core import FlowDag, Trajectory
from gfnloss.envs import DagEnv, EnvTables
from gfnloss.errors import ConfigError
from gfnloss.model import PolicyModel, masked_log_softmax
from gfnloss.objectives import ObjectiveKind, TrajectoryBatch, policy_logits

MODES = ("on_policy", "epsilon_noisy", "tempered", "backward")


@dataclass(frozen=True)
class SamplingStrategy:
    mode: str = "on_policy"
    epsilon: float = 0.0
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown sampler mode {self.mode!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


def _choose(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row; never returns an index past the last positive entry."""
    cum = np.cumsum(probs, axis=1)
    idx = (cum <= u[:, None]).sum(axis=1)
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def action_probabilities(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables, log_reward: np.ndarray,
                         rows: np.ndarray, strategy: SamplingStrategy) -> np.ndarray:
    """Sampling distribution over actions at each state in ``rows``."""
    with torch.no_grad():
        heads = model(model.inputs_for(tables, rows))
        logits = policy_logits(kind, heads, rows, tables, log_reward)
        if strategy.mode == "tempered":
            logits = logits / strategy.temperature
        mask = torch.as_tensor(tables.forward_mask[rows])
        probs = torch.exp(masked_log_softmax(logits, mask)).numpy()
    if strategy.mode == "epsilon_noisy":
        valid = tables.forward_mask[rows]
        uniform = valid / valid.sum(axis=1, keepdims=True)
        probs = (1.0 - strategy.epsilon) * probs + strategy.epsilon * uniform
    return probs


def sample_batch(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables, log_reward: np.ndarray, n: int,
                 strategy: SamplingStrategy, rng: np.random.Generator) -> TrajectoryBatch:
    """``n`` complete trajectories sampled in lock-step, one model call per step."""
    T = tables.max_length
    rows = np.zeros((n, T), dtype=np.int64)
    actions = np.zeros((n, T), dtype=np.int64)
    back = np.full((n, T), -1, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    src = int(tables.dag.source)
    current = np.full(n, src, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    for t in range(T):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        cur = current[idx]
        rows[idx, t] = cur
        probs = action_probabilities(kind, model, tables, log_reward, cur, strategy)
        a = _choose(probs, rng.random(len(idx)))
        actions[idx, t] = a
        nxt = tables.next_state[cur, a]
        stopped = nxt == -1
        lengths[idx[stopped]] = t + 1
        go = idx[~stopped]
        back[go, t] = tables.back_action_of[cur[~stopped], a[~stopped]]
        current[go] = nxt[~stopped]
        active[idx[stopped]] = False
    if active.any():
        raise RuntimeError("trajectory exceeded the environment's maximum length")
    return TrajectoryBatch(rows=rows, actions=actions, back_actions=back, lengths=lengths)


def sample_forward_trajectory(dag: FlowDag, model: PolicyModel, strategy: SamplingStrategy,
                              rng: np.random.Generator, kind: ObjectiveKind | None = None) -> Trajectory:
    """One complete trajectory (ending in the sink) on an explicit DAG."""
    env = DagEnv(dag)
    kind = kind or ObjectiveKind("TB")
    log_reward = np.full(dag.n_states, -np.inf)
    batch = sample_batch(kind, model, env.tables, log_reward, 1, strategy, rng)
    return batch.trajectories()[0] + (dag.sink,)


BackwardPolicy = Callable[[int], Mapping[int, float]] | None


def sample_backward_trajectory(dag: FlowDag, pb: BackwardPolicy, terminal: int,
                               rng: np.random.Generator) -> Trajectory:
    """Ancestor sampling from ``terminal`` back to the source, returned source-first.

    ``pb(s)`` maps each parent of ``s`` to its probability; ``None`` means the
    uniform backward policy.
    """
    if terminal not in dag.terminating:
        raise ValueError(f"state {terminal} is not terminating")
    path = [dag.sink, terminal]
    s = terminal
    while s != dag.source:
        parents = dag.parents[s]
        if pb is None:
            probs = np.full(len(parents), 1.0 / len(parents))
        else:
            table = pb(s)
            probs = np.array([table.get(p, 0.0) for p in parents], dtype=np.float64)
        s = parents[int(_choose(probs[None, :], rng.random(1))[0])]
        path.append(s)
    return tuple(reversed(path))


def backward_log_ratios(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables, terminals: np.ndarray,
                        n_per: int, rng: np.random.Generator, log_reward: np.ndarray | None = None) -> np.ndarray:
    """``log P_F(tau) - log P_B(tau | x)`` for ``n_per`` backward samples per terminal.

    Returns an array of shape ``[len(terminals), n_per]``.  Backward sampling
    uses the model's backward policy when it has one and the uniform policy
    otherwise.
    """
    if log_reward is None:
        log_reward = np.full(tables.n_states, -np.inf)
    m = len(terminals)
    cur = np.repeat(np.asarray(terminals, dtype=np.int64), n_per)
    total = np.zeros(len(cur))
    src = int(tables.dag.source)
    with torch.no_grad():
        # the stop step first
        heads = model(model.inputs_for(tables, cur))
        lp = masked_log_softmax(policy_logits(kind, heads, cur, tables, log_reward),
                                torch.as_tensor(tables.forward_mask[cur])).numpy()
        stop = np.argmax(tables.next_state[cur] == -1, axis=1)
        total += lp[np.arange(len(cur)), stop]
        active = cur != src
        while active.any():
            idx = np.flatnonzero(active)
            c = cur[idx]
            heads = model(model.inputs_for(tables, c))
            bmask = tables.backward_mask[c]
            if model.learned_backward:
                lb = masked_log_softmax(heads.backward_logits, torch.as_tensor(bmask)).numpy()
            else:
                with np.errstate(divide="ignore"):
                    lb = np.where(bmask, -np.log(bmask.sum(axis=1, keepdims=True)), -np.inf)
            b = _choose(np.exp(lb), rng.random(len(idx)))
            total[idx] -= lb[np.arange(len(idx)), b]
            p = tables.parent[c, b]
            a = tables.forward_action_of[c, b]
            hp = model(model.inputs_for(tables, p))
            lpp = masked_log_softmax(policy_logits(kind, hp, p, tables, log_reward),
                                     torch.as_tensor(tables.forward_mask[p])).numpy()
            total[idx] += lpp[np.arange(len(idx)), a]
            cur[idx] = p
            active[idx] = p != src
    return total.reshape(m, n_per)


def mc_terminal_log_prob(log_ratios: np.ndarray) -> np.ndarray:
    """``log((1/N) sum_i exp(r_i))`` per row."""
    n = log_ratios.shape[1]
    top = log_ratios.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(log_ratios - top).sum(axis=1, keepdims=True)) - math.log(n))[:, 0]
