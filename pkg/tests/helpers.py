"""Shared test utilities: hand-built balanced models and a finite-difference gradient check."""

import math

import numpy as np
import torch

from gfnloss.envs import DagEnv, RandomDagSpec, random_graded_dag
from gfnloss.losses import make_builtin_loss
from gfnloss.model import build_model, init_parameters
from gfnloss.objectives import VARIANTS, ObjectiveKind, env_log_rewards, trajectory_loss
from gfnloss.sampling import SamplingStrategy, sample_batch

# hand-written duals, kept apart from the library's own table
CLOSED_F = {
    "quadratic": lambda t: t - math.log(t) - 1,
    "linex1": lambda t: t * math.log(t) - t + 1,
    "linex_half": lambda t: 2 * t - 4 * math.sqrt(t) + 2,
    "shifted_cosh": lambda t: t * math.log(t) - t / 2 + 1 / (2 * t),
}
CLOSED_G = {
    "quadratic": lambda t: t * t / 2,
    "linex1": lambda t: math.exp(t) - t - 1,
    "linex_half": lambda t: 4 * math.exp(t / 2) - 2 * t - 4,
    "shifted_cosh": lambda t: math.exp(t) + math.exp(-t) - 2,
}
# (zero_forcing, zero_avoiding)
DUAL_PATTERN = {
    "quadratic": (True, False),
    "linex1": (False, True),
    "linex_half": (False, False),
    "shifted_cosh": (True, True),
}


def eight_state_dag(seed=0):
    """Source, two layers of three, sink; every state terminates."""
    spec = RandomDagSpec(layers=2, width=3, edge_density=0.6, terminate_everywhere=True, reward_lo=0.3)
    dag = random_graded_dag(spec, np.random.default_rng(seed))
    assert dag.n_states == 8
    return dag


def all_kinds():
    out = []
    for v in VARIANTS:
        for bp in (("uniform",) if v == "FM" else ("uniform", "learned")):
            out.append(ObjectiveKind(v, bp))
    return out


def true_flows(dag):
    """State flows and forward policy consistent with R and the uniform backward policy."""
    F = np.zeros(dag.n_states)
    for s in reversed(dag.topological_order):
        if s == dag.sink:
            continue
        total = dag.reward.get(s, 0.0) if s in dag.terminating else 0.0
        for c in dag.children[s]:
            if c != dag.sink:
                total += F[c] / len(dag.parents[c])
        F[s] = total
    pf = {}
    for s in range(dag.n_states):
        for c in dag.children[s]:
            pf[(s, c)] = (dag.reward[s] if c == dag.sink else F[c] / len(dag.parents[c])) / F[s]
    return F, pf


def balanced_tabular(kind, env):
    """Tabular model whose every balance condition holds under the uniform backward policy."""
    dag = env.dag
    F, pf = true_flows(dag)
    model = build_model("tabular", env, **kind.model_requirements())
    A = env.n_actions
    with torch.no_grad():
        model.table.zero_()
        for s in range(dag.n_states):
            for a, c in enumerate(dag.children[s]):
                if kind.variant == "FM":
                    # edge flows; the sink edge is read from R instead
                    model.table[s, a] = math.log(F[s] * pf[(s, c)])
                else:
                    model.table[s, a] = math.log(pf[(s, c)])
        if model.flow_head:
            col = model.out_dim - 1
            for s in range(dag.n_states):
                if s == dag.sink:
                    continue
                if model.flow_head == "state":
                    model.table[s, col] = math.log(F[s])
                else:
                    model.table[s, col] = math.log(F[s] / dag.reward[s])
        if model.log_z is not None:
            model.log_z.fill_(math.log(F[dag.source]))
    assert model.table.shape[1] >= A
    return model


def flat_params(model):
    return [p for p in model.parameters() if p.requires_grad]


def gradient_check(kind, model_kind, loss_name, dag, n_traj=6, h=1e-6, max_coords=None, seed=0):
    """Largest coordinate error of autograd against central differences, relative to the gradient scale."""
    env = DagEnv(dag)
    tables = env.tables
    req = kind.model_requirements()
    model = build_model(model_kind, env, hidden_layers=2, hidden_width=6, **req)
    init_parameters(model, np.random.default_rng(seed), scale=0.7 if model_kind == "tabular" else None)
    if model.log_z is not None:
        with torch.no_grad():
            model.log_z.fill_(0.3)
    log_reward = env_log_rewards(env, kind)
    batch = sample_batch(kind, model, tables, log_reward, n_traj, SamplingStrategy(), np.random.default_rng(seed + 1))
    g = make_builtin_loss(loss_name)

    def value():
        loss, _ = trajectory_loss(kind, model, tables, log_reward, batch, g, clamp=None)
        return loss

    params = flat_params(model)
    auto = torch.autograd.grad(value(), params, allow_unused=True)
    auto = [torch.zeros_like(p) if a is None else a for p, a in zip(params, auto)]
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.numel())]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.random.default_rng(seed + 2).choice(len(coords), max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    worst = 0.0
    scale = max(float(a.abs().max()) for a in auto)
    with torch.no_grad():
        for i, j in coords:
            flat = params[i].view(-1)
            old = float(flat[j])
            flat[j] = old + h
            up = float(value())
            flat[j] = old - h
            down = float(value())
            flat[j] = old
            fd = (up - down) / (2 * h)
            ad = float(auto[i].reshape(-1)[j])
            worst = max(worst, abs(fd - ad) / max(scale, 1e-12))
    return worst, scale
