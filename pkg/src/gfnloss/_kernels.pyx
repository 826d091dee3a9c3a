# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_purepy.py`` for the reference semantics."""

from libc.math cimport exp, fabs, isfinite

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    QUADRATIC = 0
    LINEX1 = 1
    LINEX_HALF = 2
    SHIFTED_COSH = 3
    KIND_F1 = 0
    KIND_F4 = 1
    KIND_F1_OF_EXP = 2


cdef inline double _g_prime(int code, double u) noexcept nogil:
    if code == QUADRATIC:
        return u
    if code == LINEX1:
        return exp(u) - 1.0
    if code == LINEX_HALF:
        return 2.0 * exp(0.5 * u) - 2.0
    return exp(u) - exp(-u)


ctypedef double (*integrand_t)(Ctx*, double) noexcept nogil


cdef struct Ctx:
    int code
    int kind
    double inner_abs
    double rel_tol
    int max_depth
    int ok


cdef double _adaptive(integrand_t fn, Ctx* c, double a, double b, double fa, double fm,
                      double fb, double whole, double tol, int depth) noexcept nogil:
    cdef double m = 0.5 * (a + b)
    cdef double lm = 0.5 * (a + m)
    cdef double rm = 0.5 * (m + b)
    cdef double flm = fn(c, lm)
    cdef double frm = fn(c, rm)
    cdef double h = b - a
    cdef double left = h / 12.0 * (fa + 4.0 * flm + fm)
    cdef double right = h / 12.0 * (fm + 4.0 * frm + fb)
    cdef double delta = left + right - whole
    if depth <= 0:
        c.ok = 0
        return left + right + delta / 15.0
    if fabs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return (_adaptive(fn, c, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + _adaptive(fn, c, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))


cdef double _run(integrand_t fn, int code, int kind, double a, double b, double abs_tol,
                 double rel_tol, int max_depth, int* ok) noexcept nogil:
    cdef Ctx c
    cdef double fa, fb, fm, whole, tol, val, h, scale
    cdef int i
    if a == b:
        return 0.0
    c.code = code
    c.kind = kind
    c.inner_abs = abs_tol * 1e-3
    c.rel_tol = rel_tol
    c.max_depth = max_depth
    c.ok = 1
    fa = fn(&c, a)
    fb = fn(&c, b)
    fm = fn(&c, 0.5 * (a + b))
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    tol = abs_tol
    if rel_tol > 0.0:
        h = (b - a) / 32.0
        scale = 0.0
        for i in range(33):
            scale += fabs(fn(&c, a + i * h))
        scale *= fabs(h)
        if rel_tol * scale > tol:
            tol = rel_tol * scale
    val = _adaptive(fn, &c, a, b, fa, fm, fb, whole, tol, max_depth)
    if not isfinite(val):
        c.ok = 0
    if not c.ok:
        ok[0] = 0
    return val


cdef double _plain(Ctx* c, double u) noexcept nogil:
    if c.kind == KIND_F1:
        return _g_prime(c.code, u) * exp(-u)
    return _g_prime(c.code, u) * exp(u)


cdef double _nested(Ctx* c, double u) noexcept nogil:
    # f1(e^u) = e^u * int_0^u g'(v) e^{-v} dv
    cdef int inner_ok = 1
    # the outer factor e^u scales inner errors, so the inner tolerance carries e^-u
    cdef double v = _run(_plain, c.code, KIND_F1, 0.0, u, c.inner_abs * exp(-u), c.rel_tol,
                         c.max_depth, &inner_ok)
    if not inner_ok:
        c.ok = 0
    return exp(u) * v


def simpson_builtin(int code, int kind, double a, double b, double abs_tol=1e-9,
                    double rel_tol=0.0, int max_depth=60):
    """Integrate a built-in integrand over [a, b]; returns ``(value, converged)``."""
    cdef int ok = 1
    if code < 0 or code > 3:
        raise ValueError(f"unknown loss code {code}")
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown integrand kind {kind}")
    cdef double val
    if kind == KIND_F1_OF_EXP:
        val = _run(_nested, code, kind, a, b, abs_tol, rel_tol, max_depth, &ok)
    else:
        val = _run(_plain, code, kind, a, b, abs_tol, rel_tol, max_depth, &ok)
    return val, bool(ok)


def terminal_mass(const cnp.int64_t[:] order, const cnp.int64_t[:] indptr,
                  const cnp.int64_t[:] children, const double[:] probs,
                  cnp.int64_t source):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef double[:] mass = out
    cdef Py_ssize_t i, s, e
    cdef double ms
    mass[source] = 1.0
    for i in range(order.shape[0]):
        s = order[i]
        ms = mass[s]
        if ms == 0.0:
            continue
        for e in range(indptr[s], indptr[s + 1]):
            mass[children[e]] += ms * probs[e]
    return out


def walk(const cnp.int64_t[:] indptr, const cnp.int64_t[:] children,
         const double[:] cumprobs, cnp.int64_t source, cnp.int64_t sink,
         const double[:, :] uniforms):
    cdef Py_ssize_t n_walk = uniforms.shape[0]
    cdef Py_ssize_t max_len = uniforms.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_arr = np.full(n_walk, -1, dtype=np.int64)
    cdef cnp.int64_t[:] out = out_arr
    cdef Py_ssize_t w, step, e, hi
    cdef cnp.int64_t s, nxt
    cdef double u
    with nogil:
        for w in range(n_walk):
            s = source
            for step in range(max_len):
                u = uniforms[w, step]
                e = indptr[s]
                hi = indptr[s + 1]
                while e < hi - 1 and cumprobs[e] <= u:
                    e += 1
                nxt = children[e]
                if nxt == sink:
                    out[w] = s
                    break
                s = nxt
    return out_arr
