"""Exact desk-scale checks of the loss/divergence correspondence.

Everything here enumerates: cut families are built on a graded DAG, flows are
evaluated for every cut member, and gradients come from exact reverse mode.
Models are tabular so that nothing is approximated.

The correspondence states that for a weighting ``mu(o) = p_F(o) * sum_{C ni o} w(C)``
held constant, the gradient of ``sum_o mu(o) g(log p_B(o) - log p_F(o))`` equals
the gradient of ``sum_C w(C) D_f(p_B^C || p_F^C)`` for a suitable ``f``.  Four
cases pair a weighting (by ``p_F`` or ``p_B``) with the side being
differentiated (the other side is frozen); each has its own ``f``, written here
in terms of ``u = log t``:

====  =========  ==============  ====================================
case  weighting  differentiated  ``f(e^u)``
====  =========  ==============  ====================================
f1    forward    forward         ``e^u int_0^u g'(x) e^{-x} dx``
f2    forward    backward        ``g(u)``
f3    backward   forward         ``e^u g(u)``
f4    backward   backward        ``int_0^u g'(x) e^x dx``
====  =========  ==============  ====================================
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from gfnloss.dag_core import (
    Cut,
    FlowDag,
    Trajectory,
    count_complete_trajectories,
    enumerate_complete_trajectories,
    insert_virtual_states,
    layer_index,
    state_layer_cuts,
)
from gfnloss.envs import DagEnv, RandomDagSpec, random_graded_dag
from gfnloss.errors import InfeasibleEnumeration, NonConvergence, NotGraded
from gfnloss.losses import (
    BUILTIN_LOSSES,
    FDivergenceSpec,
    RegressionLoss,
    _growth,
    builtin_fdivergence,
    classify_loss,
    f_divergence,
    fdivergence_of,
    make_builtin_loss,
)
from gfnloss.model import TabularModel, build_model, init_parameters
from gfnloss.objectives import EdgeFlows, ObjectiveKind, TrainObject, edge_flows, object_log_flows

GL_NODES = 64
ENUMERATION_CAP = 10_000
FAMILIES = ("FM", "DB", "TB", "STB")
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_NODES)


# ----------------------------------------------------------------- cut families


@dataclass
class CutFamily:
    """Cuts of a graded DAG and their weights, for one objective kind."""

    kind: ObjectiveKind
    dag: FlowDag
    cuts: list[Cut]
    weights: dict[Cut, float]

    def objects(self) -> tuple[list[TrainObject], list[float]]:
        """Every cut member as a training object, with ``sum_{C ni o} w(C)``."""
        obj_kind = self.kind.object_kind
        acc: dict[Trajectory, float] = {}
        for c in self.cuts:
            for m in c.members:
                acc[m] = acc.get(m, 0.0) + self.weights[c]
        members = sorted(acc)
        return [TrainObject(obj_kind, m) for m in members], [acc[m] for m in members]


def _require_graded(dag: FlowDag) -> dict[int, int]:
    if not dag.is_graded():
        raise NotGraded("cut families need a graded DAG; apply insert_virtual_states first")
    return layer_index(dag)


def _paths_between(dag: FlowDag, layer: dict[int, int], i: int, j: int) -> list[Trajectory]:
    frontier = [(s,) for s, l in layer.items() if l == i]
    for _ in range(j - i):
        frontier = [p + (c,) for p in frontier for c in dag.children[p[-1]]]
    return frontier


def layered_cut_families(dag: FlowDag, kind: ObjectiveKind, cap: int = ENUMERATION_CAP) -> CutFamily:
    """Cut family and weights matching the balance condition of ``kind``.

    FM uses the state layers strictly inside the DAG, DB the edge layers, TB
    the single cut of complete trajectories and STB the layer-to-layer
    sub-trajectory sets weighted by ``lambda**(j - i)`` (normalised).
    """
    layer = _require_graded(dag)
    depth = layer[dag.sink]
    if count_complete_trajectories(dag) > cap:
        raise InfeasibleEnumeration(f"more than {cap} complete trajectories")
    obj = kind.object_kind
    if obj == "state":
        cuts = state_layer_cuts(dag)
        return CutFamily(kind, dag, cuts, {c: 1.0 for c in cuts})
    if obj == "transition":
        cuts = [
            Cut(frozenset(e for e in dag.edges if layer[e[0]] == i), "edge-layer") for i in range(depth)
        ]
        return CutFamily(kind, dag, cuts, {c: 1.0 for c in cuts})
    if obj == "complete":
        c = Cut(frozenset(enumerate_complete_trajectories(dag, cap)), "complete-trajectory")
        return CutFamily(kind, dag, [c], {c: 1.0})
    lam = kind.stb_lambda
    pairs = [(i, j) for i in range(depth) for j in range(i + 1, depth + 1)]
    total = math.fsum(lam ** (j - i) for i, j in pairs)
    cuts, weights = [], {}
    for i, j in pairs:
        c = Cut(frozenset(_paths_between(dag, layer, i, j)), "partial-trajectory-layer")
        cuts.append(c)
        weights[c] = lam ** (j - i) / total
    return CutFamily(kind, dag, cuts, weights)


def family_kind(family: str, stb_lambda: float = 0.9) -> ObjectiveKind:
    if family == "FM":
        return ObjectiveKind("FM", "uniform")
    return ObjectiveKind(family, "learned", stb_lambda)


# -------------------------------------------------------------------- lifting


def lift_to_graded(flows: EdgeFlows, graded: FlowDag) -> EdgeFlows:
    """Carry flows of an ungraded DAG onto its graded subdivision.

    On a chain ``u -> v_1 -> ... -> v_k -> w`` replacing edge ``u -> w`` the
    first edge carries the original forward probability and the last one the
    original backward probability; all other chain probabilities are one.
    Virtual states get ``F(v) = F(u) P_F(w | u)`` and, on chains into the
    sink, the reward of ``u``.  Every chain edge carries the original
    flow-matching edge flow.
    """
    orig = flows.dag
    if graded is orig:
        return flows
    o_ids = flows.edge_ids()
    chains: dict[tuple[int, int], list[int]] = {}
    for v in sorted(graded.virtual - orig.virtual):
        chains.setdefault(graded.virtual_origin[v], []).append(v)
    indptr, children = graded.csr
    src_edge = np.empty(len(children), dtype=np.int64)
    first = np.zeros(len(children), dtype=bool)
    last = np.zeros(len(children), dtype=bool)
    for (u, w), vs in chains.items():
        path = [u, *vs, w]
        for a, b in zip(path, path[1:]):
            e = int(indptr[a] + np.searchsorted(children[indptr[a] : indptr[a + 1]], b))
            src_edge[e] = o_ids[(u, w)]
            first[e] = a == u
            last[e] = b == w
    for a in range(orig.n_states):
        for e in range(indptr[a], indptr[a + 1]):
            b = int(children[e])
            if a in graded.virtual or b in graded.virtual:
                continue
            src_edge[e] = o_ids[(a, b)]
            first[e] = last[e] = True
    se = torch.as_tensor(src_edge)
    one = torch.zeros((), dtype=torch.float64)
    log_pf = torch.where(torch.as_tensor(first), flows.log_pf[se], one)
    log_pb = torch.where(torch.as_tensor(last), flows.log_pb[se], one)
    log_edge_flow = flows.log_edge_flow[se] if flows.log_edge_flow is not None else None
    n_new = graded.n_states - orig.n_states
    virt_u = torch.as_tensor([graded.virtual_origin[v][0] for v in range(orig.n_states, graded.n_states)],
                             dtype=torch.long)
    virt_e = torch.as_tensor([o_ids[graded.virtual_origin[v]] for v in range(orig.n_states, graded.n_states)],
                             dtype=torch.long)
    to_sink = torch.as_tensor([graded.virtual_origin[v][1] == orig.sink for v in range(orig.n_states,
                                                                                        graded.n_states)])
    log_flow = None
    if flows.log_flow is not None:
        log_flow = torch.cat([flows.log_flow, flows.log_flow[virt_u] + flows.log_pf[virt_e]]) if n_new else flows.log_flow
    ninf = torch.tensor(-math.inf, dtype=torch.float64)
    log_reward = torch.cat([flows.log_reward, torch.where(to_sink, flows.log_reward[virt_u], ninf)])
    return EdgeFlows(graded, log_pf, log_pb, log_flow, flows.log_z, log_edge_flow, log_reward)


# ------------------------------------------------------------- f generators


@dataclass(frozen=True)
class CorrespondenceCase:
    name: str
    weighting: str  # forward | backward
    differentiated: str  # forward_params | backward_params

    def __post_init__(self):
        if self.weighting not in ("forward", "backward"):
            raise ValueError(f"weighting must be forward or backward, got {self.weighting!r}")
        if self.differentiated not in ("forward_params", "backward_params"):
            raise ValueError(f"unknown differentiated side {self.differentiated!r}")


CASES = (
    CorrespondenceCase("f1", "forward", "forward_params"),
    CorrespondenceCase("f2", "forward", "backward_params"),
    CorrespondenceCase("f3", "backward", "forward_params"),
    CorrespondenceCase("f4", "backward", "backward_params"),
)
_CASE_BY_NAME = {c.name: c for c in CASES}


def _g_prime_torch(g: RegressionLoss, x: torch.Tensor) -> torch.Tensor:
    with torch.enable_grad():
        xx = x if x.requires_grad else x.detach().requires_grad_(True)
        return torch.autograd.grad(g.g_torch(xx).sum(), xx, create_graph=x.requires_grad)[0]


def _gl_integral(h: Callable[[torch.Tensor], torch.Tensor], u: torch.Tensor) -> torch.Tensor:
    """``int_0^u h(x) dx`` elementwise by Gauss-Legendre, differentiable in ``u``."""
    xs = torch.as_tensor(_GL_X, dtype=torch.float64)
    ws = torch.as_tensor(_GL_W, dtype=torch.float64)
    half = 0.5 * u[..., None]
    nodes = half * (1.0 + xs)
    return (half * ws * h(nodes)).sum(dim=-1)


def phi_torch(case: CorrespondenceCase | str, g: RegressionLoss) -> Callable[[torch.Tensor], torch.Tensor]:
    """``u -> f(e^u)`` for the case's generator, as a torch function."""
    name = case if isinstance(case, str) else case.name
    if name == "f1":
        return lambda u: torch.exp(u) * _gl_integral(lambda x: _g_prime_torch(g, x) * torch.exp(-x), u)
    if name == "f2":
        return g.g_torch
    if name == "f3":
        return lambda u: torch.exp(u) * g.g_torch(u)
    if name == "f4":
        return lambda u: _gl_integral(lambda x: _g_prime_torch(g, x) * torch.exp(x), u)
    raise ValueError(f"unknown case {name!r}")


def case_fdivergence(case: CorrespondenceCase | str, g: RegressionLoss) -> FDivergenceSpec:
    """The case's generator as an :class:`FDivergenceSpec` (limits probed numerically)."""
    phi = phi_torch(case, g)
    name = case if isinstance(case, str) else case.name

    def f(t: float) -> float:
        return float(phi(torch.tensor([math.log(t)], dtype=torch.float64))[0])

    def f_prime(t: float) -> float:
        u = torch.tensor([math.log(t)], dtype=torch.float64, requires_grad=True)
        (d,) = torch.autograd.grad(phi(u).sum(), u)
        return float(d[0]) / t

    def limit(values):
        finite = [v for v in values if math.isfinite(v)]
        diverges = _growth(tuple(values))
        return math.inf if diverges or diverges is None or not finite else values[-1]

    probes = (5.0, 10.0, 20.0)
    with np.errstate(all="ignore"):
        f0 = limit([abs(f(math.exp(-L))) for L in probes])
        finf = limit([abs(f(math.exp(L)) / math.exp(L)) for L in probes])
    return FDivergenceSpec(f"{name}({g.name})", f, f_prime, f0, finf)


# -------------------------------------------------------------- divergences


def _family_flows(family: CutFamily, model, dag: FlowDag) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """``(log p_F, log p_B, weight)`` for every member of every cut, on the lifted DAG."""
    flows = edge_flows(family.kind, model, DagEnv(dag))
    lifted = lift_to_graded(flows, family.dag)
    objects, weights = family.objects()
    lpf, lpb = object_log_flows(family.kind, lifted, objects)
    return lpf, lpb, torch.as_tensor(weights, dtype=torch.float64)


def divergence_objective(dag: FlowDag, model, family: CutFamily, f: FDivergenceSpec) -> float:
    """``sum_C w(C) D_f(p_B^C || p_F^C)`` over unnormalised cut-restricted flows."""
    flows = edge_flows(family.kind, model, DagEnv(dag))
    lifted = lift_to_graded(flows, family.dag)
    total = 0.0
    for c in family.cuts:
        w = family.weights[c]
        if w == 0.0:
            continue
        members = sorted(c.members)
        with torch.no_grad():
            lpf, lpb = object_log_flows(family.kind, lifted, [TrainObject(family.kind.object_kind, m)
                                                              for m in members])
        p = dict(zip(members, torch.exp(lpb).tolist()))
        q = dict(zip(members, torch.exp(lpf).tolist()))
        total += w * f_divergence(p, q, f)
    return total


# ----------------------------------------------------- gradient correspondence


@dataclass
class CorrespondenceReport:
    max_abs_grad_lhs: float
    max_rel_error: float
    per_parameter_errors: list[float]
    passed: bool
    fd_rel_error: float | None = None
    applicable: bool = True

    @property
    def pass_(self) -> bool:
        return self.passed


def _sides(lpf: torch.Tensor, lpb: torch.Tensor, w: torch.Tensor, g: RegressionLoss,
           case: CorrespondenceCase) -> tuple[torch.Tensor, torch.Tensor]:
    if case.differentiated == "forward_params":
        lpb = lpb.detach()
    else:
        lpf = lpf.detach()
    base = lpf if case.weighting == "forward" else lpb
    mu = (torch.exp(base) * w).detach()
    ratio = lpb - lpf
    lhs = (mu * g.g_torch(ratio)).sum()
    phi = phi_torch(case, g)
    rhs = (w * torch.exp(lpf) * phi(ratio)).sum()
    return lhs, rhs


def _compare(lhs_grads, rhs_grads, tol: float) -> CorrespondenceReport:
    lg = torch.cat([x.reshape(-1) for x in lhs_grads])
    rg = torch.cat([x.reshape(-1) for x in rhs_grads])
    scale = float(lg.abs().max()) if lg.numel() else 0.0
    err = (lg - rg).abs()
    if scale == 0.0:
        rel = 0.0 if float(err.max(initial=0.0) if err.numel() else 0.0) == 0.0 else math.inf
        per = [0.0 if e == 0 else math.inf for e in err.tolist()]
    else:
        per = (err / scale).tolist()
        rel = max(per)
    return CorrespondenceReport(scale, rel, per, rel < tol)


def _grads(value: torch.Tensor, params: list[torch.Tensor], retain: bool) -> list[torch.Tensor]:
    if not value.requires_grad:
        return [torch.zeros_like(p) for p in params]
    out = torch.autograd.grad(value, params, retain_graph=retain, allow_unused=True)
    return [torch.zeros_like(p) if d is None else d for p, d in zip(params, out)]


def verify_grad_correspondence(dag: FlowDag, model, g: RegressionLoss, case: CorrespondenceCase | str,
                               tol: float = 1e-6, family: CutFamily | None = None, kind: ObjectiveKind | None = None,
                               fd_params: int = 0, fd_step: float = 1e-5,
                               rng: np.random.Generator | None = None) -> CorrespondenceReport:
    """Compare the gradient of the weighted loss with that of the weighted divergence.

    ``family`` defaults to the TB family of ``kind`` (or TB) on the graded
    subdivision of ``dag``.  With ``fd_params > 0`` that many randomly chosen
    parameters are also checked against central finite differences of the
    divergence side.
    """
    if not isinstance(model, TabularModel):
        raise TypeError("the correspondence check needs a tabular model")
    case = _CASE_BY_NAME[case] if isinstance(case, str) else case
    if family is None:
        family = layered_cut_families(insert_virtual_states(dag), kind or ObjectiveKind("TB", "learned"))
    params = [p for p in model.parameters()]
    lpf, lpb, w = _family_flows(family, model, dag)
    if not (torch.isfinite(lpf).all() and torch.isfinite(lpb).all()):
        return CorrespondenceReport(0.0, math.nan, [], False, applicable=False)
    lhs, rhs = _sides(lpf, lpb, w, g, case)
    report = _compare(_grads(lhs, params, True), _grads(rhs, params, False), tol)
    if fd_params > 0:
        report.fd_rel_error = _finite_difference_check(dag, model, g, case, family, params, report, fd_params,
                                                       fd_step, rng or np.random.default_rng(0))
    return report


def _finite_difference_check(dag, model, g, case, family, params, report, n, h, rng) -> float:
    lpf0, lpb0, w = _family_flows(family, model, dag)
    lpf0, lpb0 = lpf0.detach(), lpb0.detach()
    flat = [(pi, idx) for pi, p in enumerate(params) for idx in np.ndindex(*p.shape)]
    pick = rng.choice(len(flat), size=min(n, len(flat)), replace=False)
    rhs_grads = _grads(_sides(*_family_flows(family, model, dag)[:2], w, g, case)[1], params, False)

    def value() -> float:
        with torch.no_grad():
            lpf, lpb, _ = _family_flows(family, model, dag)
            if case.differentiated == "forward_params":
                lpb = lpb0
            else:
                lpf = lpf0
            phi = phi_torch(case, g)
            return float((w * torch.exp(lpf) * phi(lpb - lpf)).sum())

    worst = 0.0
    scale = max(report.max_abs_grad_lhs, 1e-300)
    for k in pick:
        pi, idx = flat[int(k)]
        p = params[pi]
        with torch.no_grad():
            old = float(p[idx])
            p[idx] = old + h
            up = value()
            p[idx] = old - h
            down = value()
            p[idx] = old
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(fd - float(rhs_grads[pi][idx])) / scale)
    return worst


# ----------------------------------------------------------------- the matrix


@dataclass
class MatrixRow:
    dag_seed: int
    loss: str
    case: str
    family: str
    max_rel_error: float
    passed: bool
    counterexample: str | None = None


MATRIX_TRAJECTORY_CAP = 200


def matrix_dag(seed: int, max_trajectories: int = MATRIX_TRAJECTORY_CAP) -> FlowDag:
    """Seeded random DAG for the verification matrix (at most 5 layers, width 4).

    Odd seeds let every state terminate and even seeds above 4 add
    layer-skipping edges, so virtual states get exercised.  Draws repeat until
    the trajectory count fits.
    """
    rng = np.random.default_rng([seed, 0x6F7261])
    spec = RandomDagSpec(
        layers=2 + seed % 3,
        width=2 + (seed // 3) % 3,
        edge_density=0.5,
        reward_law="log_uniform",
        reward_lo=0.2,
        reward_hi=3.0,
        terminate_everywhere=seed % 2 == 1,
        skip_density=0.3 if seed % 2 == 0 and seed >= 4 else 0.0,
    )
    while True:
        dag = random_graded_dag(spec, rng)
        if count_complete_trajectories(insert_virtual_states(dag)) <= max_trajectories:
            return dag


def _matrix_entry(seed: int, losses: Sequence[str], tol: float, init_scale: float) -> list[MatrixRow]:
    dag = matrix_dag(seed)
    graded = insert_virtual_states(dag)
    rows = []
    for fam in FAMILIES:
        kind = family_kind(fam)
        env = DagEnv(dag)
        model = build_model("tabular", env, **kind.model_requirements())
        init_parameters(model, np.random.default_rng([seed, FAMILIES.index(fam)]), scale=init_scale)
        family = layered_cut_families(graded, kind)
        params = list(model.parameters())
        lpf, lpb, w = _family_flows(family, model, dag)
        for name in losses:
            g = make_builtin_loss(name)
            for case in CASES:
                lhs, rhs = _sides(lpf, lpb, w, g, case)
                rep = _compare(_grads(lhs, params, True), _grads(rhs, params, True), tol)
                rows.append(MatrixRow(seed, name, case.name, fam, rep.max_rel_error, rep.passed,
                                      None if rep.passed else dag.to_text()))
    return rows


def run_matrix(seeds: Sequence[int] = tuple(range(20)), losses: Sequence[str] = BUILTIN_LOSSES,
               tol: float = 1e-6, init_scale: float = 0.5, parallelism: int = 1) -> list[MatrixRow]:
    """Every loss x case x cut family on every seeded DAG."""
    if parallelism > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(parallelism) as pool:
            parts = pool.map(_matrix_entry, seeds, [losses] * len(seeds), [tol] * len(seeds),
                             [init_scale] * len(seeds))
            return [r for part in parts for r in part]
    return [r for s in seeds for r in _matrix_entry(s, losses, tol, init_scale)]


def cut_masses(family: CutFamily, edge_probs: np.ndarray, total: float = 1.0) -> list[float]:
    """Forward flow through each cut for the Markovian flow of ``edge_probs`` on ``family.dag``.

    ``edge_probs`` is CSR-aligned; a minimal cut carries exactly ``total``.
    """
    dag = family.dag
    indptr, children = dag.csr
    reach = np.zeros(dag.n_states)
    reach[dag.source] = total
    edge_flow = np.zeros(len(children))
    for s in dag.topological_order:
        for e in range(indptr[s], indptr[s + 1]):
            edge_flow[e] = reach[s] * edge_probs[e]
            reach[children[e]] += edge_flow[e]
    eid = {(u, int(children[e])): e for u in range(dag.n_states) for e in range(indptr[u], indptr[u + 1])}
    out = []
    for c in family.cuts:
        m = 0.0
        for member in c.members:
            if len(member) == 1:
                m += reach[member[0]]
            else:
                f = reach[member[0]]
                for u, v in zip(member, member[1:]):
                    f *= edge_probs[eid[(u, v)]]
                m += f
        out.append(m)
    return out


# ------------------------------------------------------- reverse-KL special case


def three_trajectory_dag(rewards: tuple[float, float, float] = (1.0, 2.0, 0.5)) -> FlowDag:
    """``source -> a -> {x1, x2}``, ``source -> x3``; three complete trajectories, ungraded."""
    edges = [(0, 1), (0, 4), (1, 2), (1, 3), (2, 5), (3, 5), (4, 5)]
    return FlowDag.from_edges(edges, 0, 5, {2: rewards[0], 3: rewards[1], 4: rewards[2]})


def reverse_kl_special_case(dag: FlowDag, model) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of on-trajectory quadratic loss and of generalised KL(p_F || p_B).

    The loss side weights each complete trajectory by its (frozen) forward
    flow; the KL side is ``sum p_F log(p_F / p_B) - p_F + p_B`` with ``p_B``
    frozen, computed directly without any generator.
    """
    kind = ObjectiveKind("TB", "learned" if model.learned_backward else "uniform")
    flows = edge_flows(kind, model, DagEnv(dag))
    trajs = enumerate_complete_trajectories(dag)
    lpf, lpb = object_log_flows(kind, flows, [TrainObject("complete", t) for t in trajs])
    params = list(model.parameters())
    pb = lpb.detach()
    lhs = (torch.exp(lpf).detach() * 0.5 * (pb - lpf) ** 2).sum()
    pf = torch.exp(lpf)
    kl = (pf * (lpf - pb) - pf + torch.exp(pb)).sum()
    gl = _grads(lhs, params, True)
    gr = _grads(kl, params, False)
    return (torch.cat([x.reshape(-1) for x in gl]).numpy(), torch.cat([x.reshape(-1) for x in gr]).numpy())


# ------------------------------------------------------------ zero behaviour


@dataclass
class ZeroBehaviorResult:
    limit_mass_on_dead_branch: float
    verdict: str  # zero_forcing | zero_avoiding | intermediate
    iterations: int
    final_gradient: float
    oracle_mass: float


ZB_TOTAL_FLOW = 2.0  # sum of rewards; only the root logit trains
ZB_GRAD_TOL = 1e-9
ZB_MAX_ITER = 10**6


def _zb_generator(g: RegressionLoss) -> FDivergenceSpec:
    try:
        return builtin_fdivergence(g.name)
    except Exception:
        return fdivergence_of(g)


def constrained_tree_objective(a: float, f: FDivergenceSpec, Z: float = ZB_TOTAL_FLOW) -> float:
    """``D_f(p_B || p_F)`` over the three complete trajectories, at ``P(A) = a``.

    Branch A splits evenly into ``x1`` (R=1) and ``x2`` (R=0); B leads to
    ``x3`` (R=1).  Backward flows are the rewards since the DAG is a tree.
    """
    pf = {"x1": Z * a / 2, "x2": Z * a / 2, "x3": Z * (1 - a)}
    pb = {"x1": 1.0, "x2": 0.0, "x3": 1.0}
    return f_divergence(pb, pf, f)


def grid_search_dead_mass(g: RegressionLoss, step: float = 1e-4) -> float:
    """Minimiser of the constrained-tree divergence over ``a`` on a uniform grid."""
    f = _zb_generator(g)
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    values = np.array([constrained_tree_objective(float(a), f) for a in grid])
    return float(grid[int(np.argmin(values))])


def _zb_gradient(theta: float, g: RegressionLoss, Z: float = ZB_TOTAL_FLOW) -> float:
    """Exact gradient of the trajectory loss in the root logit with ``mu = p_F`` frozen."""
    a = 1.0 / (1.0 + math.exp(-theta))
    with np.errstate(divide="ignore"):
        r1 = math.log(1.0) - math.log(Z * a / 2)
        r3 = math.log(1.0) - math.log(Z * (1 - a))
        gp_dead = float(g.g_prime(-math.inf))
    p1 = p2 = Z * a / 2
    p3 = Z * (1 - a)
    # d log p_F / d theta is (1 - a) on branch A and -a on branch B
    return -((p1 * float(g.g_prime(r1)) + p2 * gp_dead) * (1 - a) - p3 * float(g.g_prime(r3)) * a)


def zero_behavior_test(g: RegressionLoss, theta0: float = 1.0, max_iter: int = ZB_MAX_ITER,
                       grad_tol: float = ZB_GRAD_TOL) -> ZeroBehaviorResult:
    """Train the root logit of the constrained tree to convergence.

    If the loss gradient on the dead branch diverges (``g'(-inf) = -inf``),
    the objective is infinite for every ``P(A) > 0`` and the only limit is
    ``P(A) = 0``.  Otherwise gradient descent with backtracking line search
    runs until ``|grad| < grad_tol``.
    """
    cls = classify_loss(g)
    oracle = grid_search_dead_mass(g)
    with np.errstate(all="ignore"):
        dead_slope = float(g.g_prime(-math.inf))
    if not math.isfinite(dead_slope):
        return ZeroBehaviorResult(0.0, "zero_forcing", 0, math.inf, oracle)
    f = _zb_generator(g)

    def J(th: float) -> float:
        return constrained_tree_objective(1.0 / (1.0 + math.exp(-th)), f)

    theta, step = theta0, 1.0
    grad = _zb_gradient(theta, g)
    for it in range(1, max_iter + 1):
        if abs(grad) < grad_tol:
            a = 1.0 / (1.0 + math.exp(-theta))
            verdict = "zero_avoiding" if cls.zero_avoiding and a >= 1e-3 else "intermediate"
            return ZeroBehaviorResult(a, verdict, it - 1, grad, oracle)
        j0 = J(theta)
        step = min(step * 2.0, 1e6)
        while True:
            cand = theta - step * grad
            jc = J(cand)
            if jc <= j0 - 1e-4 * step * grad * grad:
                break
            # at round-off level the objective stops resolving descent; accept if the slope shrinks
            if abs(jc - j0) <= 1e-14 * max(1.0, abs(j0)) and abs(_zb_gradient(cand, g)) < abs(grad):
                break
            step *= 0.5
            if step < 1e-300:
                raise NonConvergence(f"line search failed at theta={theta!r}, grad={grad!r}")
        theta = cand
        grad = _zb_gradient(theta, g)
    raise NonConvergence(f"no convergence within {max_iter} iterations (grad={grad!r})")


@dataclass
class ZeroBehaviorCheck:
    loss: str
    mass: float
    oracle_mass: float
    passed: bool
    criterion: str = field(default="")


def zero_behavior_acceptance(name: str) -> ZeroBehaviorCheck:
    """Acceptance rule per built-in: collapse, analytic optimum or the grid oracle."""
    res = zero_behavior_test(make_builtin_loss(name))
    a = res.limit_mass_on_dead_branch
    if name == "quadratic":
        return ZeroBehaviorCheck(name, a, res.oracle_mass, a < 1e-3, "P(A) < 1e-3")
    if name == "linex1":
        return ZeroBehaviorCheck(name, a, res.oracle_mass, abs(a - 0.5) < 1e-3, "|P(A) - 0.5| < 1e-3")
    return ZeroBehaviorCheck(name, a, res.oracle_mass, abs(a - res.oracle_mass) < 1e-3, "|P(A) - grid| < 1e-3")
