"""Evaluation metrics: L1 errors, rank correlations, mode discovery, CSV rows."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, fields

import numpy as np
import torch
from scipy.stats import rankdata

from gfnloss.dag_core import terminal_distribution_from_probs
from gfnloss.envs import EnvTables
from gfnloss.errors import DegenerateConstantInput, EmptyWindow, LengthMismatch, TooLargeForExact
from gfnloss.model import PolicyModel, masked_log_softmax
from gfnloss.objectives import ObjectiveKind, policy_logits
from gfnloss.sampling import backward_log_ratios, mc_terminal_log_prob

EXACT_STATE_LIMIT = 200_000
CSV_HEADER = (
    "step",
    "trajectories",
    "loss",
    "objective",
    "l1_exact",
    "l1_empirical",
    "spearman",
    "modes_found",
    "avg_reward",
    "avg_topk_reward",
    "seed",
)


def policy_table(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables, log_reward: np.ndarray) -> np.ndarray:
    """Forward-policy probabilities ``[n_states, n_actions]`` for every state."""
    rows = np.arange(tables.n_states)
    with torch.no_grad():
        heads = model(model.inputs_for(tables, rows))
        logits = policy_logits(kind, heads, rows, tables, log_reward)
        return torch.exp(masked_log_softmax(logits, torch.as_tensor(tables.forward_mask))).numpy()


def exact_terminal_probs(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables,
                         log_reward: np.ndarray) -> np.ndarray:
    """P_T aligned with ``tables.dag.terminal_list`` by exact forward dynamic programming."""
    if tables.n_states > EXACT_STATE_LIMIT:
        raise TooLargeForExact(f"{tables.n_states} states exceed the exact-evaluation limit")
    probs = policy_table(kind, model, tables, log_reward)
    n = probs.shape[0]
    es, ea = tables.edge_state, tables.edge_action
    edge_p = probs[np.minimum(es, n - 1), ea]
    return terminal_distribution_from_probs(tables.dag, edge_p)


def reward_distribution(tables: EnvTables) -> np.ndarray:
    r = tables.dag.terminal_reward_vector()
    return r / r.sum()


def l1_distance(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def l1_exact(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables, log_reward: np.ndarray) -> float:
    return l1_distance(exact_terminal_probs(kind, model, tables, log_reward), reward_distribution(tables))


def l1_empirical(samples: Iterable, reward: Mapping) -> float:
    """L1 between the empirical frequencies of ``samples`` and ``reward`` normalised.

    States absent from ``reward`` count as zero-reward support.
    """
    counts = Counter(samples)
    n = sum(counts.values())
    if n == 0:
        raise EmptyWindow("no samples in the evaluation window")
    z = math.fsum(reward.values())
    keys = set(counts) | set(reward)
    return math.fsum(abs(counts.get(k, 0) / n - reward.get(k, 0.0) / z) for k in keys)


def spearman_rank_corr(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    if len(a) != len(b):
        raise LengthMismatch(f"lengths differ: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise LengthMismatch("need at least two observations")
    ra = rankdata(np.asarray(a, dtype=np.float64))
    rb = rankdata(np.asarray(b, dtype=np.float64))
    da, db = ra - ra.mean(), rb - rb.mean()
    na, nb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if na == 0.0 or nb == 0.0:
        raise DegenerateConstantInput("rank correlation is undefined for constant input")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def _spearman_or_zero(a, b) -> float:
    try:
        return spearman_rank_corr(a, b)
    except DegenerateConstantInput:
        return 0.0


def spearman_mc(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables, test_rows: Sequence[int], N: int,
                rng: np.random.Generator, log_reward: np.ndarray | None = None) -> float:
    """Rank correlation of Monte-Carlo P_T estimates with the rewards.

    ``P_T(x)`` is estimated by averaging ``P_F(tau) / P_B(tau | x)`` over ``N``
    backward-sampled trajectories.  Constant estimates give 0.
    """
    rows = np.asarray(test_rows, dtype=np.int64)
    log_pt = mc_terminal_log_prob(backward_log_ratios(kind, model, tables, rows, N, rng, log_reward))
    return _spearman_or_zero(log_pt, tables.reward[rows])


def spearman_exact(kind: ObjectiveKind, model: PolicyModel, tables: EnvTables, log_reward: np.ndarray) -> float:
    pt = exact_terminal_probs(kind, model, tables, log_reward)
    return _spearman_or_zero(pt, tables.dag.terminal_reward_vector())


def hamming(x: int, y: int) -> int:
    return (x ^ y).bit_count()


def modes_found(generated: Iterable[int], targets: Sequence[int], delta: int) -> int:
    """Number of targets with a generated sequence within Hamming distance ``delta``."""
    gen = set(generated)
    return sum(1 for m in targets if any(hamming(x, m) <= delta for x in gen))


def top_k_mean(values: Iterable[float], k: int) -> float:
    v = sorted(values, reverse=True)[:k]
    return float(np.mean(v)) if v else float("nan")


@dataclass
class EvalReport:
    step: int
    trajectories: int
    loss: float | None = None
    objective: str = ""
    l1_exact: float | None = None
    l1_empirical: float | None = None
    spearman: float | None = None
    modes_found: int | None = None
    avg_reward: float | None = None
    avg_topk_reward: float | None = None
    seed: int | None = None

    def row(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


def csv_text(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


class CsvLog:
    """Append-only CSV of evaluation rows with the fixed header."""

    def __init__(self, path):
        self.path = path
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(CSV_HEADER)

    def append(self, report: EvalReport) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(report.row())
