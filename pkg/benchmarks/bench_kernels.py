"""Compiled vs pure-Python kernel timings.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on identical inputs under both backends; outputs are
compared before timing so a speedup never hides a wrong answer.
"""

import argparse
import timeit

import numpy as np

from gfnloss import _core
from gfnloss.dag_core import insert_virtual_states
from gfnloss.envs import HypergridEnv, HypergridSpec, RandomDagSpec, random_graded_dag


def _random_probs(dag, rng):
    indptr, children = dag.csr
    probs = np.empty(len(children))
    for s in range(dag.n_states):
        lo, hi = indptr[s], indptr[s + 1]
        if hi > lo:
            q = rng.random(hi - lo)
            probs[lo:hi] = q / q.sum()
    return probs


def cases():
    """``(label, call(backend))`` pairs."""
    rng = np.random.default_rng(0)
    grid = HypergridEnv(HypergridSpec(D=2, H=32)).tables.dag
    g_indptr, g_children = grid.csr
    g_probs = _random_probs(grid, rng)
    g_order = np.asarray(grid.topological_order, dtype=np.int64)

    dag = insert_virtual_states(random_graded_dag(RandomDagSpec(layers=6, width=4, terminate_everywhere=True), rng))
    d_indptr, d_children = dag.csr
    d_probs = _random_probs(dag, rng)
    d_cum = np.empty_like(d_probs)
    for s in range(dag.n_states):
        lo, hi = d_indptr[s], d_indptr[s + 1]
        if hi > lo:
            d_cum[lo:hi] = np.cumsum(d_probs[lo:hi])
    uniforms = rng.random((2000, dag.n_states))

    return [
        (f"terminal_mass, hyper-grid {grid.n_states} states",
         lambda k: k.terminal_mass(g_order, g_indptr, g_children, g_probs, grid.source)),
        (f"walk, 2000 walks on {dag.n_states}-state DAG",
         lambda k: k.walk(d_indptr, d_children, d_cum, dag.source, dag.sink, uniforms)),
        ("simpson f1 integrand, shifted_cosh on [0, 6]",
         lambda k: k.simpson_builtin(_core.SHIFTED_COSH, _core.KIND_F1, 0.0, 6.0, 1e-11, 0.0, 60)),
        ("simpson nested f1(e^u), linex1 on [0, -2.5]",
         lambda k: k.simpson_builtin(_core.LINEX1, _core.KIND_F1_OF_EXP, 0.0, -2.5, 1e-9, 0.0, 60)),
    ]


def _same(a, b):
    if isinstance(a, tuple):
        return a[1] == b[1] and abs(a[0] - b[0]) <= 1e-12 * max(1.0, abs(a[0]))
    return np.allclose(a, b, rtol=1e-13, atol=0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = _core.backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the Python backend only")
    print(f"{'kernel':48s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for label, call in cases():
        times = {}
        outputs = {}
        for name, kernels in backends.items():
            outputs[name] = call(kernels)
            times[name] = min(timeit.repeat(lambda: call(kernels), number=1, repeat=args.repeat)) * 1e3
        if "compiled" in outputs and not _same(outputs["python"], outputs["compiled"]):
            raise SystemExit(f"backends disagree on {label}")
        py = times["python"]
        comp = times.get("compiled")
        comp_s = f"{comp:12.3f}" if comp is not None else f"{'-':>12s}"
        speed = f"{py / comp:7.1f}x" if comp else f"{'-':>8s}"
        print(f"{label:48s} {py:10.3f} {comp_s} {speed}")


if __name__ == "__main__":
    main()
