"""Pure-Python implementations of the hot kernels.

Mirrors ``_kernels.pyx`` operation for operation so both backends return the
same numbers; ``gfnloss._core`` picks one at import time.
"""

import math

import numpy as np

QUADRATIC, LINEX1, LINEX_HALF, SHIFTED_COSH = 0, 1, 2, 3
KIND_F1, KIND_F4, KIND_F1_OF_EXP = 0, 1, 2


def g_prime(code, u):
    if code == QUADRATIC:
        return u
    if code == LINEX1:
        return math.exp(u) - 1.0
    if code == LINEX_HALF:
        return 2.0 * math.exp(0.5 * u) - 2.0
    if code == SHIFTED_COSH:
        return math.exp(u) - math.exp(-u)
    raise ValueError(f"unknown loss code {code}")


def integrand(code, kind, u):
    if kind == KIND_F1:
        return g_prime(code, u) * math.exp(-u)
    if kind == KIND_F4:
        return g_prime(code, u) * math.exp(u)
    raise ValueError(f"unknown integrand kind {kind}")


def _adaptive(fn, a, b, fa, fm, fb, whole, tol, depth, state):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = fn(lm)
    frm = fn(rm)
    h = b - a
    left = h / 12.0 * (fa + 4.0 * flm + fm)
    right = h / 12.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0:
        state[0] = False
        return left + right + delta / 15.0
    if abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return _adaptive(fn, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, state) + _adaptive(
        fn, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, state
    )


def adaptive_simpson(fn, a, b, abs_tol=1e-9, rel_tol=0.0, max_depth=60):
    """Integrate ``fn`` over [a, b]; returns ``(value, converged)``."""
    if a == b:
        return 0.0, True
    fa = fn(a)
    fb = fn(b)
    m = 0.5 * (a + b)
    fm = fn(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    tol = abs_tol
    if rel_tol > 0.0:
        # magnitude scale from a coarse grid; a 3-point estimate can miss peaks
        h = (b - a) / 32.0
        scale = 0.0
        for i in range(33):
            scale += abs(fn(a + i * h))
        scale *= abs(h)
        if rel_tol * scale > tol:
            tol = rel_tol * scale
    state = [True]
    val = _adaptive(fn, a, b, fa, fm, fb, whole, tol, max_depth, state)
    if not math.isfinite(val):
        return val, False
    return val, state[0]


def simpson_builtin(code, kind, a, b, abs_tol=1e-9, rel_tol=0.0, max_depth=60):
    """Integrate a built-in integrand over [a, b]; returns ``(value, converged)``."""
    if code not in (QUADRATIC, LINEX1, LINEX_HALF, SHIFTED_COSH):
        raise ValueError(f"unknown loss code {code}")
    if kind not in (KIND_F1, KIND_F4, KIND_F1_OF_EXP):
        raise ValueError(f"unknown integrand kind {kind}")
    inner_ok = [True]
    inner_tol = abs_tol * 1e-3

    def fn(u):
        if kind != KIND_F1_OF_EXP:
            return integrand(code, kind, u)
        # f1(e^u) = e^u * int_0^u g'(v) e^{-v} dv; the factor e^u scales inner errors
        v, ok = simpson_builtin(code, KIND_F1, 0.0, u, inner_tol * math.exp(-u), rel_tol, max_depth)
        if not ok:
            inner_ok[0] = False
        return math.exp(u) * v

    val, ok = adaptive_simpson(fn, a, b, abs_tol, rel_tol, max_depth)
    return val, ok and inner_ok[0]


def terminal_mass(order, indptr, children, probs, source):
    """Push unit mass from ``source`` along edges in topological ``order``."""
    n = len(indptr) - 1
    mass = np.zeros(n, dtype=np.float64)
    mass[source] = 1.0
    for s in order:
        ms = mass[s]
        if ms == 0.0:
            continue
        for e in range(indptr[s], indptr[s + 1]):
            mass[children[e]] += ms * probs[e]
    return mass


def walk(indptr, children, cumprobs, source, sink, uniforms):
    """Sample one walk per row of ``uniforms``; returns the state before sink."""
    n_walk, max_len = uniforms.shape
    out = np.full(n_walk, -1, dtype=np.int64)
    for w in range(n_walk):
        s = source
        for step in range(max_len):
            u = uniforms[w, step]
            lo = indptr[s]
            hi = indptr[s + 1]
            e = lo
            while e < hi - 1 and cumprobs[e] <= u:
                e += 1
            nxt = children[e]
            if nxt == sink:
                out[w] = s
                break
            s = nxt
    return out
