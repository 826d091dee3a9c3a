import math
import os
import subprocess
import sys

import numpy as np
import pytest

from gfnloss import _core, _purepy
from gfnloss.dag_core import insert_virtual_states
from gfnloss.envs import RandomDagSpec, random_graded_dag

BACKENDS = _core.backends()
compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")


def test_python_backend_always_available():
    assert "python" in BACKENDS


def test_env_var_forces_fallback():
    code = "from gfnloss import _core; print(_core.BACKEND)"
    env = dict(os.environ, GFNLOSS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("fn, a, b, exact", [
    (math.sin, 0.0, math.pi, 2.0),
    (math.exp, -1.0, 2.0, math.exp(2) - math.exp(-1)),
    (lambda x: x**4, 0.0, 1.0, 0.2),
])
def test_adaptive_simpson_known_integrals(fn, a, b, exact):
    val, ok = _purepy.adaptive_simpson(fn, a, b, 1e-12)
    assert ok
    assert val == pytest.approx(exact, abs=1e-10)


def test_adaptive_simpson_reversed_interval():
    v1, _ = _purepy.adaptive_simpson(math.cos, 0.0, 1.0, 1e-12)
    v2, _ = _purepy.adaptive_simpson(math.cos, 1.0, 0.0, 1e-12)
    assert v1 == pytest.approx(-v2, abs=1e-12)


def test_adaptive_simpson_reports_failure():
    _, ok = _purepy.adaptive_simpson(lambda x: 1.0 / x if x else 1e300, 0.0, 1.0, 1e-12, max_depth=5)
    assert not ok


@compiled
@pytest.mark.parametrize("code", [_core.QUADRATIC, _core.LINEX1, _core.LINEX_HALF, _core.SHIFTED_COSH])
@pytest.mark.parametrize("kind", [_core.KIND_F1, _core.KIND_F4])
@pytest.mark.parametrize("b", [-5.0, -0.3, 0.7, 4.0])
def test_simpson_backends_agree(code, kind, b):
    ref = _purepy.simpson_builtin(code, kind, 0.0, b, 1e-11, 0.0, 60)
    got = BACKENDS["compiled"].simpson_builtin(code, kind, 0.0, b, 1e-11, 0.0, 60)
    assert got[1] == ref[1]
    assert got[0] == pytest.approx(ref[0], rel=1e-13, abs=1e-15)



@compiled
@pytest.mark.parametrize("code", [_core.QUADRATIC, _core.LINEX1, _core.LINEX_HALF, _core.SHIFTED_COSH])
@pytest.mark.parametrize("b", [-2.9, 1.5])
def test_nested_simpson_backends_agree(code, b):
    ref = _purepy.simpson_builtin(code, _core.KIND_F1_OF_EXP, 0.0, b, 1e-9, 0.0, 60)
    got = BACKENDS["compiled"].simpson_builtin(code, _core.KIND_F1_OF_EXP, 0.0, b, 1e-9, 0.0, 60)
    assert got[1] and ref[1]
    assert got[0] == pytest.approx(ref[0], rel=1e-12, abs=1e-14)

def _dag_arrays(seed):
    dag = insert_virtual_states(random_graded_dag(RandomDagSpec(layers=4, width=3, terminate_everywhere=True),
                                                  np.random.default_rng(seed)))
    indptr, children = dag.csr
    rng = np.random.default_rng(seed + 1)
    probs = np.empty(len(children))
    for s in range(dag.n_states):
        lo, hi = indptr[s], indptr[s + 1]
        if hi > lo:
            q = rng.random(hi - lo)
            probs[lo:hi] = q / q.sum()
    return dag, indptr, children, probs


@compiled
@pytest.mark.parametrize("seed", range(5))
def test_terminal_mass_backends_agree(seed):
    dag, indptr, children, probs = _dag_arrays(seed)
    order = np.asarray(dag.topological_order, dtype=np.int64)
    a = _purepy.terminal_mass(order, indptr, children, probs, dag.source)
    b = BACKENDS["compiled"].terminal_mass(order, indptr, children, probs, dag.source)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=0)


@compiled
@pytest.mark.parametrize("seed", range(3))
def test_walk_backends_agree(seed):
    dag, indptr, children, probs = _dag_arrays(seed)
    cum = np.empty_like(probs)
    for s in range(dag.n_states):
        lo, hi = indptr[s], indptr[s + 1]
        if hi > lo:
            cum[lo:hi] = np.cumsum(probs[lo:hi])
    u = np.random.default_rng(seed).random((500, dag.n_states))
    a = _purepy.walk(indptr, children, cum, dag.source, dag.sink, u)
    b = BACKENDS["compiled"].walk(indptr, children, cum, dag.source, dag.sink, u)
    np.testing.assert_array_equal(a, b)
