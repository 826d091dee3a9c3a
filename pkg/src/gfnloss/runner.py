"""Seeded training runs, scheduled evaluation, and multi-run suites."""

from __future__ import annotations

import json
import math
import os
import statistics
import time
import traceback
from collections import deque
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from gfnloss.config import ExperimentConfig
from gfnloss.dag_core import FlowDag
from gfnloss.envs import (
    BitSeqEnv,
    BitSeqSpec,
    DagEnv,
    HypergridEnv,
    HypergridSpec,
    RandomDagSpec,
    diamond_dag,
    make_targets,
    random_graded_dag,
    targets_from_hex,
)
from gfnloss.errors import NumericalDivergence
from gfnloss.losses import resolve_loss
from gfnloss.metrics import (
    CsvLog,
    EvalReport,
    l1_distance,
    exact_terminal_probs,
    reward_distribution,
    spearman_exact,
    spearman_mc,
    top_k_mean,
)
from gfnloss.model import AdamState, adam_step, build_model, clip_grad_norm, init_parameters, save_checkpoint
from gfnloss.objectives import ObjectiveKind, env_log_rewards, trajectory_loss
from gfnloss.sampling import SamplingStrategy, sample_batch

OUTPUT_ENV_VAR = "GFNLOSS_OUTPUT_DIR"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV_VAR, "runs"))


def make_env(cfg: ExperimentConfig):
    e = cfg.env
    if e.kind == "hypergrid":
        return HypergridEnv(HypergridSpec(D=e.D, H=e.H, R0=e.R0, R1=e.R1, R2=e.R2))
    if e.kind == "bitseq":
        if e.targets:
            targets = targets_from_hex(e.targets)
        else:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(e.target_seed)))
            targets = make_targets(e.n, e.n_modes, rng)
        return BitSeqEnv(BitSeqSpec(n=e.n, k=e.k, targets=targets, delta=e.delta, beta=e.beta))
    if e.kind == "random_dag":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(e.dag_seed)))
        spec = RandomDagSpec(layers=e.layers, width=e.width, edge_density=e.edge_density)
        return DagEnv(random_graded_dag(spec, rng))
    if e.kind == "diamond":
        return DagEnv(diamond_dag())
    return DagEnv(FlowDag.from_text(Path(e.dag_file).read_text()))


def objective_kind(cfg: ExperimentConfig) -> ObjectiveKind:
    o = cfg.objective
    return ObjectiveKind(o.variant, o.backward, o.stb_lambda)


def _rng(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(ss))


def mode_hits(env, tables, delta: int) -> np.ndarray | None:
    """``[n_states, |M|]`` table: terminal state within ``delta`` of each target."""
    if not isinstance(env, BitSeqEnv):
        return None
    k = env.spec.k
    out = np.zeros((tables.n_states, len(env.spec.targets)), dtype=bool)
    term = tables.terminal_indices
    words = np.asarray([tables.states[i] for i in term], dtype=np.int64)
    for j, t in enumerate(env._target_words):
        x = words ^ t[None, :]
        d = np.zeros(len(term), dtype=np.int64)
        for b in range(k):
            d += ((x >> b) & 1).sum(axis=1)
        out[term, j] = d <= delta
    return out


@dataclass
class RunSummary:
    name: str
    seed: int
    config_hash: str
    final: EvalReport
    wall_time: float
    steps: int
    trajectories: int
    steps_to_all_modes: int | None = None
    trajectories_to_all_modes: int | None = None
    steps_to_threshold: int | None = None
    trajectories_to_threshold: int | None = None
    excluded_as_collapse: bool = False
    loss: str = ""
    variant: str = ""
    output_dir: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class RunFailure:
    name: str
    seed: int
    error: str
    detail: str = ""


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None, write: bool = True) -> RunSummary:
    """Train one configuration to its trajectory budget, evaluating on schedule.

    Output is deterministic given the config: the same config yields the same
    CSV bytes.
    """
    start = time.perf_counter()
    env = make_env(cfg)
    tables = env.tables
    kind = objective_kind(cfg)
    g = resolve_loss(cfg.loss.name, cfg.custom_losses)
    t_cfg, ev = cfg.training, cfg.eval
    init_ss, sample_ss, eval_ss = np.random.SeedSequence(t_cfg.seed).spawn(3)
    sample_rng, eval_rng = _rng(sample_ss), _rng(eval_ss)

    model = build_model(cfg.model.kind, env, hidden_layers=cfg.model.hidden_layers,
                        hidden_width=cfg.model.hidden_width, **kind.model_requirements())
    init_parameters(model, _rng(init_ss), scale=cfg.model.init_scale or None)
    params = list(model.parameters())
    groups = [1 if p is model.log_z else 0 for p in params]
    opt = AdamState.create(params, lrs=(t_cfg.lr, t_cfg.z_lr), groups=groups)
    log_reward = env_log_rewards(env, kind)
    strategy = SamplingStrategy(cfg.sampler.mode, cfg.sampler.epsilon, cfg.sampler.temperature, t_cfg.seed)
    clamp = t_cfg.clamp_bound if t_cfg.clamp_bound > 0 else None

    hits = mode_hits(env, tables, cfg.env.delta)
    found = np.zeros(hits.shape[1], dtype=bool) if hits is not None else None
    seen_terminals: set[int] = set()
    window: deque[int] = deque(maxlen=cfg.window)
    test_rows = None
    if ev.spearman == "mc":
        term = tables.terminal_indices
        m = min(ev.test_set_size, len(term))
        test_rows = np.sort(eval_rng.choice(term, size=m, replace=False))

    run_dir = None
    csv = None
    if write:
        run_dir = Path(out_dir) if out_dir is not None else output_root() / f"{cfg.name}-s{t_cfg.seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.ini").write_text(cfg.to_text())
        csv = CsvLog(run_dir / "metrics.csv")

    summary = RunSummary(cfg.name, t_cfg.seed, cfg.config_hash(), EvalReport(0, 0), 0.0, 0, 0,
                         loss=g.name, variant=kind.variant, output_dir=str(run_dir or ""))
    objective_label = f"{kind.variant}:{g.name}"
    step = seen = 0
    recent_losses: list[float] = []
    recent_stats = deque(maxlen=5)

    def evaluate() -> EvalReport:
        rep = EvalReport(step, seen, objective=objective_label, seed=t_cfg.seed)
        if recent_losses:
            rep.loss = float(np.mean(recent_losses))
        if ev.l1 == "exact":
            pt = exact_terminal_probs(kind, model, tables, log_reward)
            rep.l1_exact = l1_distance(pt, reward_distribution(tables))
        if window:
            rewards = tables.reward
            counts = np.bincount(np.fromiter(window, dtype=np.int64), minlength=tables.n_states)
            term = np.asarray(tables.dag.terminal_list)
            emp = counts[term] / len(window)
            rep.l1_empirical = l1_distance(emp, reward_distribution(tables))
            rep.avg_reward = float(np.mean(rewards[np.fromiter(window, dtype=np.int64)]))
        if seen_terminals:
            rep.avg_topk_reward = top_k_mean((tables.reward[i] for i in seen_terminals), ev.top_k)
        if ev.spearman == "exact":
            rep.spearman = spearman_exact(kind, model, tables, log_reward)
        elif ev.spearman == "mc":
            rep.spearman = spearman_mc(kind, model, tables, test_rows, ev.spearman_N, eval_rng, log_reward)
        if found is not None:
            rep.modes_found = int(found.sum())
        return rep

    def record(rep: EvalReport) -> None:
        summary.final = rep
        if csv is not None:
            csv.append(rep)
        if (summary.trajectories_to_threshold is None and rep.l1_exact is not None
                and rep.l1_exact < ev.l1_threshold):
            summary.trajectories_to_threshold = rep.trajectories
            summary.steps_to_threshold = rep.step

    torch.set_num_threads(1)
    record(evaluate())
    stop = False
    while seen < t_cfg.trajectories and not stop:
        n = min(t_cfg.batch_size, t_cfg.trajectories - seen)
        batch = sample_batch(kind, model, tables, log_reward, n, strategy, sample_rng)
        loss, stats = trajectory_loss(kind, model, tables, log_reward, batch, g, clamp)
        recent_stats.append(stats)
        if not torch.isfinite(loss):
            raise NumericalDivergence(
                f"non-finite loss at step {step + 1}; recent log-ratio stats: {list(recent_stats)}"
            )
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        grads = [torch.zeros_like(p) if d is None else d for p, d in zip(params, grads)]
        if t_cfg.grad_clip > 0:
            clip_grad_norm(grads, t_cfg.grad_clip)
        adam_step(params, grads, opt)
        step += 1
        seen += n
        recent_losses.append(float(loss.detach()))
        terms = batch.terminals()
        window.extend(terms.tolist())
        seen_terminals.update(terms.tolist())
        if found is not None:
            found |= hits[terms].any(axis=0)
            if found.all() and summary.trajectories_to_all_modes is None:
                summary.trajectories_to_all_modes = seen
                summary.steps_to_all_modes = step
                stop = t_cfg.stop_when_all_modes
        if step % ev.interval == 0 or seen >= t_cfg.trajectories or stop:
            record(evaluate())
            recent_losses.clear()

    summary.steps, summary.trajectories = step, seen
    if summary.final.spearman is not None:
        summary.excluded_as_collapse = summary.final.spearman < 0
    summary.wall_time = time.perf_counter() - start
    if run_dir is not None:
        save_checkpoint(run_dir / "model.ckpt", model, summary.config_hash)
        (run_dir / "summary.json").write_text(summary.to_json())
    return summary


def _run_one(cfg: ExperimentConfig, write: bool) -> RunSummary | RunFailure:
    try:
        return run_experiment(cfg, write=write)
    except Exception as exc:  # isolate failures per run
        return RunFailure(cfg.name, cfg.training.seed, f"{type(exc).__name__}: {exc}", traceback.format_exc())


def run_suite(configs: Sequence[ExperimentConfig], parallelism: int = 1,
              write: bool = True) -> list[RunSummary | RunFailure]:
    """Run every config; one failing run does not stop the others."""
    if not configs:
        return []
    if parallelism <= 1:
        return [_run_one(c, write) for c in configs]
    with ProcessPoolExecutor(parallelism) as pool:
        return list(pool.map(_run_one, configs, [write] * len(configs)))


@dataclass
class GroupStats:
    name: str
    runs: int
    failures: int
    median_final_l1: float | None = None
    median_trajectories_to_threshold: float | None = None
    reached_threshold: int = 0
    median_trajectories_to_all_modes: float | None = None
    all_modes_found: int = 0
    median_spearman: float | None = None
    collapsed: int = 0
    extra: dict = field(default_factory=dict)


def _median(xs):
    xs = [x for x in xs if x is not None and not (isinstance(x, float) and math.isnan(x))]
    return statistics.median(xs) if xs else None


def aggregate(results: Sequence[RunSummary | RunFailure]) -> list[GroupStats]:
    """Per-config medians and success counts (runs grouped by config name)."""
    by_name: dict[str, list] = {}
    for r in results:
        by_name.setdefault(r.name, []).append(r)
    out = []
    for name, rs in sorted(by_name.items()):
        ok = [r for r in rs if isinstance(r, RunSummary)]
        kept = [r for r in ok if not r.excluded_as_collapse]
        out.append(GroupStats(
            name=name,
            runs=len(rs),
            failures=len(rs) - len(ok),
            median_final_l1=_median([r.final.l1_exact for r in ok]),
            median_trajectories_to_threshold=_median([r.trajectories_to_threshold for r in ok]),
            reached_threshold=sum(r.trajectories_to_threshold is not None for r in ok),
            median_trajectories_to_all_modes=_median([r.trajectories_to_all_modes for r in ok]),
            all_modes_found=sum(r.trajectories_to_all_modes is not None for r in ok),
            median_spearman=_median([r.final.spearman for r in kept]),
            collapsed=len(ok) - len(kept),
        ))
    return out
