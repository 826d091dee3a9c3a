"""Parameterisation mappings and the unified objective.

Every training objective assigns each training object ``o`` a pair of log
flows ``(log p_F(o), log p_B(o))`` and minimises
``sum_o mu(o) * g(log p_B(o) - log p_F(o))`` with the weights ``mu`` held
constant.  Two evaluation paths share the formulas:

* :class:`EdgeFlows` works on an explicit DAG with every flow materialised
  per edge and per state.  The oracle uses it, and so do :func:`flow_pair`
  and :func:`unified_loss`.
* :func:`trajectory_loss` works on a padded batch of sampled trajectories and
  evaluates the model only on the states it needs.  Training uses it.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch

from gfnloss.dag_core import FlowDag, Trajectory
from gfnloss.envs import DagEnv, EnvTables
from gfnloss.errors import (
    ConfigError,
    IncompatibleObject,
    MissingModelHead,
    MissingReward,
    ModifiedVariantPreconditionViolated,
)
from gfnloss.losses import RegressionLoss
from gfnloss.model import PolicyModel, masked_log_softmax

VARIANTS = ("FM", "DB", "TB", "STB", "FL_DB", "FL_STB", "MOD_DB", "MOD_STB")
_OBJECT_OF = {
    "FM": "state",
    "DB": "transition",
    "FL_DB": "transition",
    "MOD_DB": "transition",
    "TB": "complete",
    "STB": "partial",
    "FL_STB": "partial",
    "MOD_STB": "partial",
}
DEFAULT_CLAMP = 30.0


@dataclass(frozen=True)
class ObjectiveKind:
    variant: str
    backward_policy: str = "uniform"  # uniform | learned
    stb_lambda: float = 0.9

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown objective {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.backward_policy not in ("uniform", "learned"):
            raise ConfigError(f"backward policy must be uniform or learned, got {self.backward_policy!r}")
        if self.variant == "FM" and self.backward_policy != "uniform":
            raise ConfigError("flow matching has no backward policy to learn")
        if not self.stb_lambda > 0:
            raise ConfigError(f"lambda must be positive, got {self.stb_lambda}")

    @property
    def object_kind(self) -> str:
        return _OBJECT_OF[self.variant]

    @property
    def flow_head(self) -> str | None:
        if self.variant in ("DB", "STB"):
            return "state"
        if self.variant in ("FL_DB", "FL_STB"):
            return "forward_looking"
        return None

    @property
    def needs_total_flow(self) -> bool:
        return self.variant == "TB"

    def model_requirements(self) -> dict:
        return dict(
            learned_backward=self.backward_policy == "learned",
            flow_head=self.flow_head,
            total_flow=self.needs_total_flow,
        )


@dataclass(frozen=True)
class TrainObject:
    """A training object: ``(s,)`` state, ``(s, s')`` transition, or a path.

    Paths end in the sink for complete trajectories; the sink id is the one of
    the DAG the object belongs to.
    """

    kind: str  # state | transition | partial | complete
    states: Trajectory


@dataclass(frozen=True)
class FlowPair:
    log_pf: torch.Tensor
    log_pb: torch.Tensor

    @property
    def log_ratio(self) -> torch.Tensor:
        return self.log_pb - self.log_pf


@dataclass(frozen=True)
class WeightedBatch:
    items: tuple[tuple[TrainObject, float], ...]

    def __post_init__(self):
        for _, w in self.items:
            if not (math.isfinite(w) and w >= 0):
                raise ValueError(f"weights must be finite and nonnegative, got {w!r}")


def check_model(kind: ObjectiveKind, model: PolicyModel) -> None:
    if kind.flow_head and model.flow_head != kind.flow_head:
        raise MissingModelHead(f"{kind.variant} needs a {kind.flow_head} flow head")
    if kind.needs_total_flow and model.log_z is None:
        raise MissingModelHead("TB needs a total-flow parameter")
    if kind.backward_policy == "learned" and not model.learned_backward:
        raise MissingModelHead("learned backward policy requested but the model has no backward head")


def subtb_object_weights(traj: Trajectory, lam: float) -> list[tuple[Trajectory, float]]:
    """Every sub-path ``traj[i:j+1]`` (``i < j``) with weight proportional to ``lam**(j-i)``."""
    L = len(traj) - 1
    pairs = [(i, j) for i in range(L) for j in range(i + 1, L + 1)]
    raw = [lam ** (j - i) for i, j in pairs]
    total = math.fsum(raw)
    return [(tuple(traj[i : j + 1]), r / total) for (i, j), r in zip(pairs, raw)]


def apply_loss(g: RegressionLoss, log_ratio: torch.Tensor, clamp: float | None):
    """``g`` of the (optionally clamped) log-ratio and the number of clamped entries."""
    if clamp is None:
        return g.g_torch(log_ratio), 0
    hits = int((log_ratio.detach().abs() > clamp).sum())
    return g.g_torch(torch.clamp(log_ratio, -clamp, clamp)), hits


# ------------------------------------------------------- explicit DAG path


@dataclass
class EdgeFlows:
    """All log flows of a model on an explicit DAG, aligned with ``dag.csr``.

    ``log_pb`` is 0 on edges into the sink (unused there).  ``log_edge_flow``
    holds flow-matching edge flows, with ``log R(u)`` on sink edges.
    ``log_reward`` is ``-inf`` where no reward is defined.
    """

    dag: FlowDag
    log_pf: torch.Tensor
    log_pb: torch.Tensor
    log_flow: torch.Tensor | None
    log_z: torch.Tensor | None
    log_edge_flow: torch.Tensor | None
    log_reward: torch.Tensor

    def edge_ids(self) -> dict[tuple[int, int], int]:
        indptr, children = self.dag.csr
        out = {}
        for u in range(self.dag.n_states):
            for e in range(indptr[u], indptr[u + 1]):
                out[(u, int(children[e]))] = e
        return out


def _log_rewards(dag: FlowDag, kind: ObjectiveKind) -> torch.Tensor:
    out = torch.full((dag.n_states,), -math.inf, dtype=torch.float64)
    for s, r in dag.reward.items():
        out[s] = math.log(r) if r > 0 else -math.inf
    if kind.variant in ("FL_DB", "FL_STB"):
        missing = [s for s in range(dag.n_states) if s != dag.sink and s not in dag.reward]
        if missing:
            raise MissingReward(f"forward-looking flows need rewards at every state; missing {missing[:5]}")
    return out


def edge_flows(kind: ObjectiveKind, model: PolicyModel, env: DagEnv) -> EdgeFlows:
    """Evaluate ``model`` on every state of ``env`` and map heads to edge flows."""
    check_model(kind, model)
    dag = env.dag
    tables = env.tables
    if kind.variant in ("MOD_DB", "MOD_STB"):
        bad = [s for s in range(dag.n_states) if s != dag.sink and not (tables.terminable[s] and tables.reward[s] > 0)]
        if bad:
            raise ModifiedVariantPreconditionViolated(
                f"modified variants need every state terminating with positive reward; violated at {bad[:5]}"
            )
    log_reward = _log_rewards(dag, kind)
    rows = np.arange(dag.n_states)
    heads = model(model.inputs_for(tables, rows))
    fmask = torch.as_tensor(tables.forward_mask)
    es = torch.as_tensor(tables.edge_state)
    ea = torch.as_tensor(tables.edge_action)
    indptr, children = dag.csr
    ch = torch.as_tensor(children)
    is_sink_edge = ch == dag.sink
    logp = masked_log_softmax(heads.forward_logits, fmask)
    if kind.variant == "FM":
        log_edge_flow = torch.where(is_sink_edge, log_reward[es], heads.forward_logits[es, ea])
        # the flow-matching forward policy is proportional to edge flows
        fm_logits = policy_logits(kind, heads, rows, tables, log_reward.numpy())
        log_pf = masked_log_softmax(fm_logits, fmask)[es, ea]
    else:
        log_edge_flow = None
        log_pf = logp[es, ea]
    # backward log-probabilities for every non-sink edge u -> v
    child = torch.where(is_sink_edge, torch.zeros_like(ch), ch)
    if model.learned_backward and kind.variant != "FM":
        bmask = torch.as_tensor(tables.backward_mask)
        lb = masked_log_softmax(heads.backward_logits, bmask)
        back = torch.as_tensor(
            [tables.back_action_of[u, a] if not s else 0 for u, a, s in zip(tables.edge_state, tables.edge_action, is_sink_edge.numpy())]
        )
        log_pb = torch.where(is_sink_edge, torch.zeros(()), lb[child, back])
    else:
        indeg = torch.as_tensor(tables.backward_mask.sum(axis=1), dtype=torch.float64)
        log_pb = torch.where(is_sink_edge, torch.zeros(()), -torch.log(indeg[child].clamp(min=1.0)))
    log_flow = None
    if kind.variant in ("DB", "STB"):
        log_flow = heads.log_flow
    elif kind.variant in ("FL_DB", "FL_STB"):
        log_flow = log_reward + heads.log_flow
    elif kind.variant in ("MOD_DB", "MOD_STB"):
        stop_edge = torch.full((dag.n_states,), 0, dtype=torch.long)
        for e in torch.nonzero(is_sink_edge).flatten().tolist():
            stop_edge[int(tables.edge_state[e])] = e
        log_flow = log_reward - log_pf[stop_edge]
    return EdgeFlows(
        dag=dag,
        log_pf=log_pf,
        log_pb=log_pb,
        log_flow=log_flow,
        log_z=model.log_z if kind.variant == "TB" else None,
        log_edge_flow=log_edge_flow,
        log_reward=log_reward,
    )


def _pad(paths: Sequence[Sequence[int]], fill: int) -> torch.Tensor:
    width = max((len(p) for p in paths), default=0)
    out = np.full((len(paths), max(width, 1)), fill, dtype=np.int64)
    for i, p in enumerate(paths):
        out[i, : len(p)] = p
    return torch.as_tensor(out)


def _padded_sum(values: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    ext = torch.cat([values, torch.zeros(1, dtype=values.dtype)])
    return ext[idx].sum(dim=1)


def _check_object(kind: ObjectiveKind, o: TrainObject, dag: FlowDag, edge_id) -> None:
    want = kind.object_kind
    if o.kind != want:
        raise IncompatibleObject(f"{kind.variant} trains on {want} objects, got {o.kind}")
    st = o.states
    if want == "state":
        if len(st) != 1 or st[0] in (dag.source, dag.sink):
            raise IncompatibleObject(f"flow matching objects are inner states, got {st}")
        return
    if len(st) < 2 or any((u, v) not in edge_id for u, v in zip(st, st[1:])):
        raise IncompatibleObject(f"{st} is not a path of the DAG")
    if want == "transition" and len(st) != 2:
        raise IncompatibleObject(f"transition objects have two states, got {st}")
    if want == "complete" and (st[0] != dag.source or st[-1] != dag.sink):
        raise IncompatibleObject(f"{st} is not a complete trajectory")
    if dag.sink in st[:-1]:
        raise IncompatibleObject(f"{st} passes through the sink")


def object_log_flows(kind: ObjectiveKind, flows: EdgeFlows, objects: Sequence[TrainObject],
                     validate: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Vectorised ``(log p_F, log p_B)`` for many objects of one kind."""
    dag = flows.dag
    edge_id = flows.edge_ids()
    if validate:
        for o in objects:
            _check_object(kind, o, dag, edge_id)
    n_edges = len(flows.log_pf)
    if kind.object_kind == "state":
        states = [o.states[0] for o in objects]
        indptr, _ = dag.csr
        ins = [[edge_id[(p, s)] for p in dag.parents[s]] for s in states]
        outs = [list(range(indptr[s], indptr[s + 1])) for s in states]
        ext = torch.cat([flows.log_edge_flow, torch.tensor([-math.inf], dtype=torch.float64)])
        log_pf = torch.logsumexp(ext[_pad(ins, n_edges)], dim=1)
        log_pb = torch.logsumexp(ext[_pad(outs, n_edges)], dim=1)
        return log_pf, log_pb
    paths = [o.states for o in objects]
    fwd_edges = [[edge_id[(u, v)] for u, v in zip(p, p[1:])] for p in paths]
    ends_in_sink = torch.as_tensor([p[-1] == dag.sink for p in paths])
    # backward edges: all of them unless the path ends in the sink
    back_edges = [e if p[-1] != dag.sink else e[:-1] for p, e in zip(paths, fwd_edges)]
    sum_pf = _padded_sum(flows.log_pf, _pad(fwd_edges, n_edges))
    sum_pb = _padded_sum(flows.log_pb, _pad(back_edges, n_edges))
    first = torch.as_tensor([p[0] for p in paths])
    last = torch.as_tensor([p[-1] for p in paths])
    before_last = torch.as_tensor([p[-2] for p in paths])
    if kind.object_kind == "complete":
        start = flows.log_z.expand(len(paths))
    else:
        start = flows.log_flow[first]
    log_pf = start + sum_pf
    end_flow = flows.log_flow[torch.where(ends_in_sink, first, last)] if flows.log_flow is not None else None
    if end_flow is None:
        log_pb = flows.log_reward[before_last] + sum_pb
    else:
        log_pb = torch.where(ends_in_sink, flows.log_reward[before_last], end_flow) + sum_pb
    return log_pf, log_pb


def flow_pair(kind: ObjectiveKind, model: PolicyModel, dag: FlowDag, o: TrainObject) -> FlowPair:
    flows = edge_flows(kind, model, DagEnv(dag))
    pf, pb = object_log_flows(kind, flows, [o])
    return FlowPair(pf[0], pb[0])


def unified_loss(batch: WeightedBatch, kind: ObjectiveKind, model: PolicyModel, dag: FlowDag,
                 g: RegressionLoss, clamp: float | None = None) -> torch.Tensor:
    """``sum_i w_i g(log p_B - log p_F)`` with the weights held constant."""
    if not batch.items:
        raise ValueError("batch is empty")
    flows = edge_flows(kind, model, DagEnv(dag))
    objects = [o for o, _ in batch.items]
    w = torch.as_tensor([w for _, w in batch.items], dtype=torch.float64)
    pf, pb = object_log_flows(kind, flows, objects)
    values, _ = apply_loss(g, pb - pf, clamp)
    return (w * values).sum()


# ------------------------------------------------------------ batched path


@dataclass
class TrajectoryBatch:
    """Padded batch of complete trajectories over an enumerated environment.

    Row ``b`` visits state indices ``rows[b, :lengths[b]]`` and then the sink;
    ``actions[b, t]`` is the forward action taken at step ``t`` (the last one
    is the stop action) and ``back_actions[b, t]`` the backward action at
    ``rows[b, t+1]`` leading back to ``rows[b, t]``.
    """

    rows: np.ndarray
    actions: np.ndarray
    back_actions: np.ndarray
    lengths: np.ndarray

    @property
    def size(self) -> int:
        return len(self.lengths)

    def terminals(self) -> np.ndarray:
        return self.rows[np.arange(self.size), self.lengths - 1]

    def trajectories(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in self.rows[b, : self.lengths[b]]) for b in range(self.size)]


@dataclass
class LossStats:
    n_objects: int
    clamp_hits: int
    log_ratio_mean: float
    log_ratio_absmax: float


def policy_logits(kind: ObjectiveKind, heads, rows: np.ndarray, tables: EnvTables,
                  log_reward: np.ndarray) -> torch.Tensor:
    """Logits whose masked softmax is the sampling policy.

    Flow matching normalises edge flows; its stop "edge" carries ``R(s)``.
    """
    logits = heads.forward_logits
    if kind.variant != "FM":
        return logits
    stop = torch.as_tensor(tables.next_state[rows] == -1)
    lr = torch.as_tensor(log_reward[rows], dtype=torch.float64)[:, None].expand_as(logits)
    return torch.where(stop, lr, logits)


def _stop_action_rows(tables: EnvTables, rows: np.ndarray) -> np.ndarray:
    stop = tables.next_state[rows] == -1
    return np.argmax(stop, axis=1)


def env_log_rewards(env, kind: ObjectiveKind) -> np.ndarray:
    """Log rewards per state index: terminal rewards, plus intermediate ones for FL."""
    tables = env.tables
    with np.errstate(divide="ignore"):
        out = np.where(tables.reward > 0, np.log(np.where(tables.reward > 0, tables.reward, 1.0)), -np.inf)
    if kind.variant in ("FL_DB", "FL_STB"):
        for i, s in enumerate(tables.states):
            if isinstance(env, DagEnv) and s == env.dag.sink:
                continue
            r = env.intermediate_reward(s)
            out[i] = math.log(r) if r > 0 else -math.inf
    return out


def trajectory_loss(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables, log_reward: np.ndarray,
                    batch: TrajectoryBatch, g: RegressionLoss, clamp: float | None = DEFAULT_CLAMP,
                    mean_over_batch: bool = True) -> tuple[torch.Tensor, LossStats]:
    """Unified objective over the objects derived from sampled trajectories.

    Each trajectory contributes weight ``1/B`` split as follows: TB uses the
    trajectory itself; DB every transition; STB every sub-path with the
    normalised ``lambda**length`` weights; FM every visited state except the
    source.
    """
    check_model(kind, model)
    B = batch.size
    T = int(batch.lengths.max())
    rows = batch.rows[:, :T]
    valid = np.arange(T)[None, :] < batch.lengths[:, None]
    need = [rows[valid]]
    if kind.variant == "FM":
        par = tables.parent[rows[valid]]
        need.append(par[par >= 0])
    uniq = np.unique(np.concatenate(need))
    heads = model(model.inputs_for(tables, uniq))
    scale = 1.0 / B if mean_over_batch else 1.0
    pos = np.searchsorted(uniq, np.where(valid, rows, uniq[0]))
    pos_t = torch.as_tensor(pos)
    valid_t = torch.as_tensor(valid)
    lens = torch.as_tensor(batch.lengths)
    log_r_all = torch.as_tensor(log_reward[uniq], dtype=torch.float64)

    if kind.variant == "FM":
        return _fm_loss(heads, tables, uniq, rows, valid, log_reward, g, clamp, scale)

    fmask = torch.as_tensor(tables.forward_mask[uniq])
    logp = masked_log_softmax(heads.forward_logits, fmask)
    act = torch.as_tensor(batch.actions[:, :T])
    lpf = torch.where(valid_t, logp[pos_t, act], torch.zeros(()))
    # backward log-probabilities of step t, read at state t+1
    nxt_valid = np.arange(T)[None, :] < (batch.lengths[:, None] - 1)
    nxt_pos = torch.as_tensor(np.concatenate([pos[:, 1:], pos[:, :1]], axis=1))
    nv = torch.as_tensor(nxt_valid)
    if model.learned_backward:
        bmask = torch.as_tensor(tables.backward_mask[uniq])
        lb = masked_log_softmax(heads.backward_logits, bmask)
        back = torch.as_tensor(batch.back_actions[:, :T])
        lpb = torch.where(nv, lb[nxt_pos, back.clamp(min=0)], torch.zeros(()))
    else:
        indeg = torch.as_tensor(tables.backward_mask[uniq].sum(axis=1), dtype=torch.float64).clamp(min=1.0)
        lpb = torch.where(nv, -torch.log(indeg[nxt_pos]), torch.zeros(()))
    term_pos = pos_t[torch.arange(B), lens - 1]
    log_r_term = log_r_all[term_pos]

    if kind.variant == "TB":
        log_pf = model.log_z + lpf.sum(dim=1)
        log_pb = log_r_term + lpb.sum(dim=1)
        values, hits = apply_loss(g, log_pb - log_pf, clamp)
        loss = scale * values.sum()
        return loss, _stats(log_pb - log_pf, hits)

    if kind.variant in ("DB", "STB"):
        lf = heads.log_flow[pos_t]
    elif kind.variant in ("FL_DB", "FL_STB"):
        lf = log_r_all[pos_t] + heads.log_flow[pos_t]
    else:  # modified variants
        if not (tables.terminable[uniq].all() and np.all(np.isfinite(log_reward[uniq]))):
            raise ModifiedVariantPreconditionViolated("modified variants need every visited state terminable with R > 0")
        stop_idx = torch.as_tensor(_stop_action_rows(tables, uniq))
        lstop = logp[torch.arange(len(uniq)), stop_idx]
        lf = log_r_all[pos_t] - lstop[pos_t]

    if kind.variant in ("DB", "FL_DB", "MOD_DB"):
        lf_next = torch.cat([lf[:, 1:], lf[:, :1]], dim=1)
        is_last = torch.as_tensor(np.arange(T)[None, :] == (batch.lengths[:, None] - 1))
        log_pf = lf + lpf
        log_pb = torch.where(is_last, log_r_term[:, None].expand(B, T), lf_next + lpb)
        ratio = (log_pb - log_pf)[valid_t]
        values, hits = apply_loss(g, ratio, clamp)
        return scale * values.sum(), _stats(ratio, hits)

    # sub-trajectory balance over all pairs i < j <= length
    zero = torch.zeros((B, 1), dtype=torch.float64)
    cf = torch.cat([zero, torch.cumsum(lpf, dim=1)], dim=1)  # [B, T+1]
    cb = torch.cat([zero, torch.cumsum(lpb, dim=1)], dim=1)
    lf_pad = torch.cat([lf, zero], dim=1)
    ii, jj = np.triu_indices(T + 1, k=1)
    ii_t, jj_t = torch.as_tensor(ii), torch.as_tensor(jj)
    pair_valid = torch.as_tensor(jj[None, :] <= batch.lengths[:, None])
    at_sink = torch.as_tensor(jj[None, :] == batch.lengths[:, None])
    log_pf = lf_pad[:, ii_t] + cf[:, jj_t] - cf[:, ii_t]
    jm1 = torch.clamp(jj_t - 1, min=0)
    inner = lf_pad[:, jj_t] + cb[:, jj_t] - cb[:, ii_t]
    to_sink = log_r_term[:, None] + cb[:, jm1] - cb[:, ii_t]
    log_pb = torch.where(at_sink, to_sink, inner)
    lam = kind.stb_lambda
    w = torch.as_tensor(lam ** (jj - ii).astype(np.float64))[None, :].expand(B, -1)
    w = torch.where(pair_valid, w, torch.zeros(()))
    w = w / w.sum(dim=1, keepdim=True)
    ratio = torch.where(pair_valid, log_pb - log_pf, torch.zeros(()))
    values, hits = apply_loss(g, ratio, clamp)
    loss = scale * (w * values).sum()
    return loss, _stats(ratio[pair_valid], hits)


def _fm_loss(heads, tables: EnvTables, uniq, rows, valid, log_reward, g, clamp, scale):
    # objects: visited states except the source (t >= 1)
    obj_rows = rows[:, 1:][valid[:, 1:]]
    if len(obj_rows) == 0:
        zero = heads.forward_logits.sum() * 0.0
        return zero, LossStats(0, 0, 0.0, 0.0)
    logits = heads.forward_logits
    ninf = torch.tensor(-math.inf, dtype=torch.float64)
    # inflow: edge flows from every parent
    par = tables.parent[obj_rows]  # [m, Bk]
    fa = tables.forward_action_of[obj_rows]
    ok = par >= 0
    par_pos = np.searchsorted(uniq, np.where(ok, par, uniq[0]))
    inflow_terms = torch.where(
        torch.as_tensor(ok), logits[torch.as_tensor(par_pos), torch.as_tensor(np.where(ok, fa, 0))], ninf
    )
    log_pf = torch.logsumexp(inflow_terms, dim=1)
    # outflow: edge flows to non-sink children plus R(s) on the stop edge
    opos = torch.as_tensor(np.searchsorted(uniq, obj_rows))
    nxt = tables.next_state[obj_rows]
    out_terms = torch.where(torch.as_tensor(nxt >= 0), logits[opos], ninf)
    lr = torch.as_tensor(log_reward[obj_rows], dtype=torch.float64)
    has_stop = torch.as_tensor((nxt == -1).any(axis=1))
    out_terms = torch.cat([out_terms, torch.where(has_stop, lr, ninf)[:, None]], dim=1)
    log_pb = torch.logsumexp(out_terms, dim=1)
    ratio = log_pb - log_pf
    values, hits = apply_loss(g, ratio, clamp)
    return scale * values.sum(), _stats(ratio, hits)


def _stats(ratio: torch.Tensor, hits: int) -> LossStats:
    r = ratio.detach()
    if r.numel() == 0:
        return LossStats(0, hits, 0.0, 0.0)
    return LossStats(int(r.numel()), hits, float(r.mean()), float(r.abs().max()))
