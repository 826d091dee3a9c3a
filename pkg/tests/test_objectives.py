import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from gfnloss.config import ConfigError
from gfnloss.dag_core import FlowDag, enumerate_complete_trajectories
from gfnloss.envs import DagEnv, RandomDagSpec, diamond_dag, random_graded_dag
from gfnloss.errors import (
    IncompatibleObject,
    MissingModelHead,
    MissingReward,
    ModifiedVariantPreconditionViolated,
)
from gfnloss.losses import BUILTIN_LOSSES, make_builtin_loss
from gfnloss.model import build_model, init_parameters
from gfnloss.objectives import (
    ObjectiveKind,
    TrainObject,
    WeightedBatch,
    edge_flows,
    env_log_rewards,
    flow_pair,
    object_log_flows,
    subtb_object_weights,
    trajectory_loss,
    unified_loss,
)
from gfnloss.sampling import SamplingStrategy, sample_batch

from helpers import all_kinds, balanced_tabular, eight_state_dag, true_flows

QUAD = make_builtin_loss("quadratic")


def tabular(kind, dag, scale=None, seed=0):
    env = DagEnv(dag)
    m = build_model("tabular", env, **kind.model_requirements())
    init_parameters(m, np.random.default_rng(seed), scale=scale)
    return m


def chain_dag(reward=2.0):
    return FlowDag.from_edges([(0, 1), (1, 2)], 0, 2, {1: reward})


# ------------------------------------------------------------ flow pairs


def test_balanced_chain_tb():
    kind = ObjectiveKind("TB")
    dag = chain_dag()
    m = tabular(kind, dag)
    with torch.no_grad():
        m.log_z.fill_(math.log(2.0))
    fp = flow_pair(kind, m, dag, TrainObject("complete", (0, 1, 2)))
    assert float(fp.log_pf) == pytest.approx(math.log(2.0))
    assert float(fp.log_pb) == pytest.approx(math.log(2.0))
    assert float(fp.log_ratio) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("backward", ["uniform", "learned"])
def test_db_sink_transition_uses_reward(backward):
    kind = ObjectiveKind("DB", backward)
    dag = diamond_dag((1.5, 0.25))
    m = tabular(kind, dag, scale=1.0)
    for s, r in ((1, 1.5), (2, 0.25)):
        fp = flow_pair(kind, m, dag, TrainObject("transition", (s, 3)))
        assert float(fp.log_pb) == pytest.approx(math.log(r), abs=1e-15)


def test_fm_inflow_outflow_by_hand():
    # 0 -> 1, 0 -> 2, 1 -> 2, 1 -> sink, 2 -> sink
    dag = FlowDag.from_edges([(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)], 0, 3, {1: 0.5, 2: 2.0})
    kind = ObjectiveKind("FM")
    m = tabular(kind, dag)
    hand = {(0, 1): 1.25, (0, 2): 0.75, (1, 2): 0.4}
    with torch.no_grad():
        for (u, v), f in hand.items():
            m.table[u, dag.children[u].index(v)] = math.log(f)
    for s, inflow, outflow in ((1, 1.25, 0.5 + 0.4), (2, 0.75 + 0.4, 2.0)):
        fp = flow_pair(kind, m, dag, TrainObject("state", (s,)))
        assert math.exp(float(fp.log_pf)) == pytest.approx(inflow, rel=1e-14)
        assert math.exp(float(fp.log_pb)) == pytest.approx(outflow, rel=1e-14)


# ------------------------------------------------------------ unified loss


def test_unified_loss_examples():
    kind = ObjectiveKind("TB")
    dag = diamond_dag((math.e, math.exp(-1)))
    m = tabular(kind, dag)
    with torch.no_grad():
        m.log_z.fill_(math.log(2.0))  # cancels the 1/2 branch probability
    a, b = TrainObject("complete", (0, 1, 3)), TrainObject("complete", (0, 2, 3))
    assert float(unified_loss(WeightedBatch(((a, 1.0),)), kind, m, dag, QUAD)) == pytest.approx(0.5)
    val = unified_loss(WeightedBatch(((a, 0.3), (b, 0.7))), kind, m, dag, make_builtin_loss("linex1"))
    assert float(val) == pytest.approx(0.3 * (math.e - 2) + 0.7 * math.exp(-1), abs=1e-12)
    assert float(val) == pytest.approx(0.473000, abs=1e-6)


def test_weights_are_constants():
    kind = ObjectiveKind("TB")
    dag = diamond_dag((math.e, 1.0))
    m = tabular(kind, dag)
    w = torch.tensor(0.3, dtype=torch.float64, requires_grad=True)
    loss = unified_loss(WeightedBatch(((TrainObject("complete", (0, 1, 3)), float(w)),)), kind, m, dag, QUAD)
    loss.backward()
    assert w.grad is None and m.log_z.grad is not None


def test_weighted_batch_validation():
    o = TrainObject("complete", (0, 1, 3))
    with pytest.raises(ValueError):
        WeightedBatch(((o, -1.0),))
    with pytest.raises(ValueError):
        WeightedBatch(((o, math.nan),))
    kind = ObjectiveKind("TB")
    with pytest.raises(ValueError):
        unified_loss(WeightedBatch(()), kind, tabular(kind, diamond_dag()), diamond_dag(), QUAD)


# ------------------------------------------------------------ STB weights


def test_subtb_weights_examples():
    w = subtb_object_weights((0, 1, 2), 1.0)
    assert [p for p, _ in w] == [(0, 1), (0, 1, 2), (1, 2)]
    assert all(x == pytest.approx(1 / 3) for _, x in w)
    w = dict(subtb_object_weights((0, 1, 2), 0.9))
    assert w[(0, 1)] == pytest.approx(0.344828, abs=1e-6)
    assert w[(1, 2)] == pytest.approx(0.344828, abs=1e-6)
    assert w[(0, 1, 2)] == pytest.approx(0.310345, abs=1e-6)


@given(st.integers(1, 12), st.floats(0.05, 3.0))
def test_subtb_weights_sum_to_one(L, lam):
    w = subtb_object_weights(tuple(range(L + 1)), lam)
    assert len(w) == L * (L + 1) // 2
    assert math.fsum(x for _, x in w) == pytest.approx(1.0, abs=1e-12)
    assert all(len(p) >= 2 for p, _ in w)


# ---------------------------------------------------------------- errors


def test_incompatible_objects():
    dag = diamond_dag()
    tb = ObjectiveKind("TB")
    m = tabular(tb, dag)
    with pytest.raises(IncompatibleObject):
        flow_pair(tb, m, dag, TrainObject("transition", (0, 1)))
    with pytest.raises(IncompatibleObject):
        flow_pair(tb, m, dag, TrainObject("complete", (0, 1)))
    with pytest.raises(IncompatibleObject):
        flow_pair(tb, m, dag, TrainObject("complete", (0, 3)))
    fm = ObjectiveKind("FM")
    with pytest.raises(IncompatibleObject):
        flow_pair(fm, tabular(fm, dag), dag, TrainObject("state", (0,)))
    db = ObjectiveKind("DB")
    with pytest.raises(IncompatibleObject):
        flow_pair(db, tabular(db, dag), dag, TrainObject("transition", (0, 1, 3)))


def test_missing_heads():
    dag = diamond_dag()
    env = DagEnv(dag)
    bare = build_model("tabular", env, learned_backward=False, flow_head=None, total_flow=False)
    for kind in (ObjectiveKind("TB"), ObjectiveKind("DB"), ObjectiveKind("FL_DB"), ObjectiveKind("MOD_DB", "learned")):
        with pytest.raises(MissingModelHead):
            edge_flows(kind, bare, env)


def test_modified_variant_precondition():
    dag = diamond_dag()  # the source does not terminate
    kind = ObjectiveKind("MOD_DB")
    with pytest.raises(ModifiedVariantPreconditionViolated):
        edge_flows(kind, tabular(kind, dag), DagEnv(dag))
    env = DagEnv(dag)
    m = tabular(kind, dag)
    tables = env.tables
    batch = sample_batch(ObjectiveKind("DB"), m, tables, env_log_rewards(env, kind), 4, SamplingStrategy(),
                         np.random.default_rng(0))
    with pytest.raises(ModifiedVariantPreconditionViolated):
        trajectory_loss(kind, m, tables, env_log_rewards(env, kind), batch, QUAD)


def test_forward_looking_needs_rewards_everywhere():
    dag = diamond_dag()
    kind = ObjectiveKind("FL_DB")
    with pytest.raises(MissingReward):
        edge_flows(kind, tabular(kind, dag), DagEnv(dag))


def test_objective_kind_validation():
    with pytest.raises(ConfigError):
        ObjectiveKind("GTB")
    with pytest.raises(ConfigError):
        ObjectiveKind("FM", "learned")
    with pytest.raises(ConfigError):
        ObjectiveKind("STB", stb_lambda=0.0)


# ----------------------------------------------------- balanced networks


def _all_objects(kind, dag):
    trajs = enumerate_complete_trajectories(dag)
    if kind.object_kind == "complete":
        return [TrainObject("complete", t) for t in trajs]
    if kind.object_kind == "transition":
        return [TrainObject("transition", e) for e in dag.edges]
    if kind.object_kind == "state":
        return [TrainObject("state", (s,)) for s in range(dag.n_states) if s not in (dag.source, dag.sink)]
    subs = {p for t in trajs for p, _ in subtb_object_weights(t, 0.5)}
    return [TrainObject("partial", p) for p in sorted(subs)]


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("kind", all_kinds(), ids=lambda k: f"{k.variant}-{k.backward_policy}")
def test_balanced_network_has_zero_loss(kind, seed):
    dag = random_graded_dag(RandomDagSpec(layers=3, width=2, terminate_everywhere=True, skip_density=0.3),
                            np.random.default_rng(seed))
    env = DagEnv(dag)
    m = balanced_tabular(kind, env)
    flows = edge_flows(kind, m, env)
    pf, pb = object_log_flows(kind, flows, _all_objects(kind, dag))
    assert float((pb - pf).abs().max()) < 1e-12
    batch = sample_batch(kind, m, env.tables, env_log_rewards(env, kind), 16, SamplingStrategy(),
                         np.random.default_rng(seed))
    for name in BUILTIN_LOSSES:
        loss, stats = trajectory_loss(kind, m, env.tables, env_log_rewards(env, kind), batch, make_builtin_loss(name))
        assert abs(float(loss)) < 1e-20 + 1e-12 and stats.log_ratio_absmax < 1e-12


def test_balanced_network_samples_reward_distribution():
    dag = eight_state_dag(1)
    env = DagEnv(dag)
    kind = ObjectiveKind("TB")
    m = balanced_tabular(kind, env)
    _, pf = true_flows(dag)
    from gfnloss.dag_core import exact_terminal_distribution

    pt = exact_terminal_distribution(dag, pf)
    z = sum(dag.reward[s] for s in dag.terminating)
    for s in dag.terminating:
        assert pt[s] == pytest.approx(dag.reward[s] / z, rel=1e-12)
    assert float(m.log_z) == pytest.approx(math.log(z))


# ------------------------------------------------ variant substitutions


def _transition_objects(dag):
    return [TrainObject("transition", e) for e in dag.edges]


@pytest.mark.parametrize("seed", range(4))
def test_modified_db_equals_db_at_induced_flows(seed):
    dag = eight_state_dag(seed)
    env = DagEnv(dag)
    mod = ObjectiveKind("MOD_DB", "learned")
    m = tabular(mod, dag, scale=0.8, seed=seed)
    flows_mod = edge_flows(mod, m, env)
    db = ObjectiveKind("DB", "learned")
    m_db = build_model("tabular", env, **db.model_requirements())
    with torch.no_grad():
        m_db.table[:, : m.table.shape[1]] = m.table
        stop = torch.as_tensor([dag.children[s].index(dag.sink) if s != dag.sink else 0 for s in range(dag.n_states)])
        lp = flows_mod.log_pf
        indptr, _ = dag.csr
        log_stop = torch.stack([lp[indptr[s] + stop[s]] if s != dag.sink else torch.tensor(0.0, dtype=torch.float64)
                                for s in range(dag.n_states)])
        rewards = torch.as_tensor([math.log(dag.reward[s]) if s in dag.reward else 0.0 for s in range(dag.n_states)],
                                  dtype=torch.float64)
        m_db.table[:, -1] = rewards - log_stop
    objs = _transition_objects(dag)
    for name in BUILTIN_LOSSES:
        g = make_builtin_loss(name)
        batch = WeightedBatch(tuple((o, 1.0 / len(objs)) for o in objs))
        a = unified_loss(batch, mod, m, dag, g)
        b = unified_loss(batch, db, m_db, dag, g)
        assert float(a) == pytest.approx(float(b), abs=1e-10)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("variant", ["DB", "STB"])
def test_forward_looking_equals_plain_with_scaled_flows(seed, variant):
    dag = eight_state_dag(seed)
    env = DagEnv(dag)
    fl = ObjectiveKind("FL_" + variant)
    plain = ObjectiveKind(variant)
    m = tabular(fl, dag, scale=0.8, seed=seed)
    m2 = tabular(plain, dag)
    with torch.no_grad():
        m2.table.copy_(m.table)
        for s in range(dag.n_states):
            if s != dag.sink:
                m2.table[s, -1] += math.log(dag.reward[s])
    trajs = enumerate_complete_trajectories(dag)
    kind_obj = "transition" if variant == "DB" else "partial"
    if kind_obj == "transition":
        objs = _transition_objects(dag)
    else:
        objs = sorted({TrainObject("partial", p) for t in trajs for p, _ in subtb_object_weights(t, 0.9)},
                      key=lambda o: o.states)
    batch = WeightedBatch(tuple((o, 1.0) for o in objs))
    for name in BUILTIN_LOSSES:
        g = make_builtin_loss(name)
        assert float(unified_loss(batch, fl, m, dag, g)) == pytest.approx(float(unified_loss(batch, plain, m2, dag, g)),
                                                                          abs=1e-10)


# --------------------------------------- batched path vs object path


def _objects_from_batch(kind, dag, batch):
    B = batch.size
    items = []
    for tr in batch.trajectories():
        full = tr + (dag.sink,)
        if kind.variant == "TB":
            items.append((TrainObject("complete", full), 1 / B))
        elif kind.variant == "FM":
            items += [(TrainObject("state", (s,)), 1 / B) for s in tr[1:]]
        elif kind.variant.endswith("DB"):
            items += [(TrainObject("transition", (a, c)), 1 / B) for a, c in zip(full, full[1:])]
        else:
            items += [(TrainObject("partial", p), w / B) for p, w in subtb_object_weights(full, kind.stb_lambda)]
    return WeightedBatch(tuple(items))


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("kind", all_kinds(), ids=lambda k: f"{k.variant}-{k.backward_policy}")
def test_batched_loss_matches_object_loss(kind, seed):
    dag = random_graded_dag(RandomDagSpec(layers=3, width=3, terminate_everywhere=True, skip_density=0.3 * (seed > 0)),
                            np.random.default_rng(seed))
    env = DagEnv(dag)
    m = tabular(kind, dag, scale=1.0, seed=seed + 5)
    lr = env_log_rewards(env, kind)
    batch = sample_batch(kind, m, env.tables, lr, 8, SamplingStrategy(), np.random.default_rng(seed))
    for name in BUILTIN_LOSSES:
        g = make_builtin_loss(name)
        fast, _ = trajectory_loss(kind, m, env.tables, lr, batch, g, clamp=None)
        slow = unified_loss(_objects_from_batch(kind, dag, batch), kind, m, dag, g)
        assert float(fast) == pytest.approx(float(slow), rel=1e-10, abs=1e-12)
        ga = torch.autograd.grad(fast, [p for p in m.parameters()], allow_unused=True)
        gb = torch.autograd.grad(slow, [p for p in m.parameters()], allow_unused=True)
        for x, y in zip(ga, gb):
            if x is None or y is None:
                assert (x is None or float(x.abs().max()) == 0) and (y is None or float(y.abs().max()) == 0)
            else:
                torch.testing.assert_close(x, y, rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------- clamping


def test_clamp_counts_and_bounds():
    kind = ObjectiveKind("TB")
    dag = diamond_dag((1.0, 1.0))
    env = DagEnv(dag)
    m = tabular(kind, dag)
    with torch.no_grad():
        m.log_z.fill_(50.0)
    lr = env_log_rewards(env, kind)
    batch = sample_batch(kind, m, env.tables, lr, 4, SamplingStrategy(), np.random.default_rng(0))
    g = make_builtin_loss("linex1")
    loss, stats = trajectory_loss(kind, m, env.tables, lr, batch, g, clamp=30.0)
    assert stats.clamp_hits == 4
    assert float(loss) == pytest.approx(float(g.g(-30.0)))
    loss.backward()
    assert float(m.log_z.grad) == 0.0  # clamped region is flat
    unclamped, _ = trajectory_loss(kind, m, env.tables, lr, batch, g, clamp=None)
    assert float(unclamped) > float(loss)


def test_any_loss_has_zero_gradient_only_at_balance():
    # single-parameter TB on the diamond: log_z is the only free direction
    kind = ObjectiveKind("TB")
    dag = diamond_dag((1.0, 1.0))
    m = tabular(kind, dag)
    obj = WeightedBatch(((TrainObject("complete", (0, 1, 3)), 0.5), (TrainObject("complete", (0, 2, 3)), 0.5)))
    for name in BUILTIN_LOSSES:
        g = make_builtin_loss(name)
        for z in np.linspace(-1.0, 2.0, 31):
            with torch.no_grad():
                m.log_z.fill_(float(z))
            m.zero_grad()
            unified_loss(obj, kind, m, dag, g).backward()
            balanced = abs(z - math.log(2.0)) < 1e-12
            assert (abs(float(m.log_z.grad)) < 1e-12) == balanced
