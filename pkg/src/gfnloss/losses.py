"""Regression losses g, their dual f-divergences, and zero-forcing/avoiding tests.

The dual of a regression loss is ``f(t) = t * int_1^t g'(log s) / s^2 ds``;
the inverse map is ``g(t) = f(e^t) - int_1^{e^t} f(s) / s ds``.  Both integrals
are evaluated in ``u = log s`` with adaptive Simpson quadrature.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np
import torch

from gfnloss import _core
from gfnloss.errors import (
    ExpressionError,
    InconclusiveClassification,
    KeyMismatch,
    QuadratureFailed,
    UnknownLoss,
)
from gfnloss.expr import Expression

BUILTIN_LOSSES = ("quadratic", "linex1", "linex_half", "shifted_cosh")
_CODES = {
    "quadratic": _core.QUADRATIC,
    "linex1": _core.LINEX1,
    "linex_half": _core.LINEX_HALF,
    "shifted_cosh": _core.SHIFTED_COSH,
}

QUAD_ABS_TOL = 1e-9
QUAD_MAX_DEPTH = 60

# classification probes: f is evaluated at exp(-L) (and f(t)/t at exp(L))
PROBE_LOGS = (10.0, 20.0, 40.0)
FINITE_REL_TOL = 1e-3


@dataclass(frozen=True)
class RegressionLoss:
    """A scalar loss applied to ``log(p_B / p_F)``.

    ``g`` works on floats and numpy arrays, ``g_torch`` on tensors.  ``code``
    is set for the built-ins and selects the compiled quadrature integrands.
    """

    name: str
    g: Callable
    g_prime: Callable
    g_double_prime: Callable | None
    g_torch: Callable
    code: int | None = None
    convex: bool = True
    expression: str | None = None

    def __call__(self, t):
        return self.g(t)


@dataclass(frozen=True)
class FDivergenceSpec:
    name: str
    f: Callable[[float], float]
    f_prime: Callable[[float], float]
    f_at_zero: float  # math.inf when the limit diverges
    f_prime_at_infinity: float
    loss_code: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class LossClassification:
    zero_forcing: bool
    zero_avoiding: bool
    probes_at_zero: tuple[float, ...] = ()
    probes_at_infinity: tuple[float, ...] = ()


def _builtin(name: str) -> RegressionLoss:
    if name == "quadratic":
        return RegressionLoss(
            name,
            g=lambda t: 0.5 * np.square(t),
            g_prime=lambda t: t * 1.0,
            g_double_prime=lambda t: np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else 1.0,
            g_torch=lambda t: 0.5 * t * t,
            code=_CODES[name],
        )
    if name == "linex1":
        return RegressionLoss(
            name,
            g=lambda t: np.exp(t) - t - 1.0,
            g_prime=lambda t: np.exp(t) - 1.0,
            g_double_prime=np.exp,
            g_torch=lambda t: torch.expm1(t) - t,
            code=_CODES[name],
        )
    if name == "linex_half":
        return RegressionLoss(
            name,
            g=lambda t: 4.0 * np.exp(0.5 * t) - 2.0 * t - 4.0,
            g_prime=lambda t: 2.0 * np.exp(0.5 * t) - 2.0,
            g_double_prime=lambda t: np.exp(0.5 * t),
            g_torch=lambda t: 4.0 * torch.expm1(0.5 * t) - 2.0 * t,
            code=_CODES[name],
        )
    if name == "shifted_cosh":
        return RegressionLoss(
            name,
            g=lambda t: np.exp(t) + np.exp(-t) - 2.0,
            g_prime=lambda t: np.exp(t) - np.exp(-t),
            g_double_prime=lambda t: np.exp(t) + np.exp(-t),
            g_torch=lambda t: torch.expm1(t) + torch.expm1(-t),
            code=_CODES[name],
        )
    raise UnknownLoss(f"unknown loss {name!r}; built-ins are {', '.join(BUILTIN_LOSSES)}")


def make_builtin_loss(name: str) -> RegressionLoss:
    return _builtin(name)


def is_convex(g: RegressionLoss, lo: float = -10.0, hi: float = 10.0, n: int = 2001) -> bool:
    grid = np.linspace(lo, hi, n)
    if g.g_double_prime is not None:
        second = np.array([float(g.g_double_prime(float(x))) for x in grid])
    else:
        h = 1e-4
        second = np.array([(g.g(x + h) - 2 * g.g(x) + g.g(x - h)) / h**2 for x in grid])
    return bool(np.all(second >= -1e-9))


def loss_from_expression(name: str, source: str) -> RegressionLoss:
    """Build a loss from an arithmetic expression in ``t``.

    Non-convex expressions are accepted and flagged (their duals are pseudo
    f-divergences); ``g(0) = g'(0) = 0`` is required.
    """
    expr = Expression(source)
    d1 = expr.derivative(1)
    d2 = expr.derivative(2)

    def g(t):
        if np.ndim(t):
            return np.vectorize(lambda x: expr.jet(x).v)(t)
        return expr.jet(t).v

    def g_prime(t):
        return np.vectorize(d1)(t) if np.ndim(t) else d1(t)

    def g_double_prime(t):
        return np.vectorize(d2)(t) if np.ndim(t) else d2(t)

    at0 = expr.jet(0.0)
    if abs(at0.v) > 1e-9 or abs(at0.d1) > 1e-9:
        raise ExpressionError(f"loss {name!r} needs g(0) = g'(0) = 0, got g(0)={at0.v!r}, g'(0)={at0.d1!r}")
    loss = RegressionLoss(name, g, g_prime, g_double_prime, expr.torch, None, True, source)
    if not is_convex(loss):
        warnings.warn(f"loss {name!r} is not convex; its dual is a pseudo f-divergence", stacklevel=2)
        loss = RegressionLoss(name, g, g_prime, g_double_prime, expr.torch, None, False, source)
    return loss


def resolve_loss(name: str, custom: Mapping[str, str] | None = None) -> RegressionLoss:
    if custom and name in custom:
        return loss_from_expression(name, custom[name])
    return make_builtin_loss(name)


def _integrate(loss_code: int | None, kind: int, fn: Callable[[float], float], a: float, b: float,
               abs_tol: float, rel_tol: float) -> float:
    if loss_code is not None:
        val, ok = _core.simpson_builtin(loss_code, kind, a, b, abs_tol, rel_tol, QUAD_MAX_DEPTH)
    else:
        try:
            val, ok = _core.adaptive_simpson(fn, a, b, abs_tol, rel_tol, QUAD_MAX_DEPTH)
        except OverflowError:
            ok = False
    if not ok or not math.isfinite(val):
        raise QuadratureFailed(f"quadrature over [{a}, {b}] did not converge")
    return val


def f_from_g(g: RegressionLoss, t: float, abs_tol: float = QUAD_ABS_TOL, rel_tol: float = 0.0) -> float:
    """The f-divergence generator dual to ``g``, evaluated at ``t > 0``."""
    if not t > 0:
        raise ValueError(f"f is defined on t > 0, got {t!r}")
    if t == 1.0:
        return 0.0
    L = math.log(t)
    # f = t * I, so I needs tolerance abs_tol / t
    integral = _integrate(
        g.code, _core.KIND_F1, lambda u: g.g_prime(u) * math.exp(-u), 0.0, L, abs_tol / t, rel_tol
    )
    return t * integral


def g_from_f(f: FDivergenceSpec, t: float, abs_tol: float = QUAD_ABS_TOL) -> float:
    """Recover the regression loss from an f-divergence generator, at real ``t``."""
    if t == 0.0:
        return 0.0
    if f.loss_code is not None:
        integral = _integrate(f.loss_code, _core.KIND_F1_OF_EXP, None, 0.0, t, abs_tol, 0.0)
    else:
        integral = _integrate(None, 0, lambda u: f.f(math.exp(u)), 0.0, t, abs_tol, 0.0)
    return f.f(math.exp(t)) - integral


def _growth(values: tuple[float, ...]) -> bool | None:
    """True if diverging, False if converged, None if ambiguous."""
    if any(not math.isfinite(v) for v in values):
        return True
    h1, h2, h3 = values
    d1, d2 = h2 - h1, h3 - h2
    if abs(d2) <= FINITE_REL_TOL * max(1.0, abs(h3)):
        return False
    if d2 > 1.0 and d2 >= 0.5 * d1:
        return True
    return None


def _safe_f(g: RegressionLoss, t: float) -> float:
    try:
        return f_from_g(g, t, abs_tol=1e-300, rel_tol=1e-10)
    except (QuadratureFailed, OverflowError):
        return math.inf


def classify_loss(g: RegressionLoss) -> LossClassification:
    """Decide numerically whether ``f(0)`` and ``f'(inf)`` of the dual diverge.

    ``f(exp(-L))`` and ``f(exp(L)) / exp(L)`` are probed at L = 10, 20, 40.  A
    limit is finite when the last increment is negligible and infinite when
    the increments keep growing at least like ``log``; anything else is
    reported as inconclusive.
    """
    at_zero = tuple(_safe_f(g, math.exp(-L)) for L in PROBE_LOGS)
    at_inf = []
    for L in PROBE_LOGS:
        v = _safe_f(g, math.exp(L))
        at_inf.append(v / math.exp(L))
    at_inf = tuple(at_inf)
    zf = _growth(at_zero)
    za = _growth(at_inf)
    if zf is None or za is None:
        raise InconclusiveClassification(
            f"cannot decide limits for {g.name!r}: f(0) probes {at_zero}, f'(inf) probes {at_inf}"
        )
    return LossClassification(zf, za, at_zero, at_inf)


# closed forms of the four duals
_CLOSED_DUALS = {
    "quadratic": (
        lambda t: t - math.log(t) - 1.0,
        lambda t: 1.0 - 1.0 / t,
        math.inf,
        1.0,
    ),
    "linex1": (
        lambda t: t * math.log(t) - t + 1.0,
        lambda t: math.log(t),
        1.0,
        math.inf,
    ),
    "linex_half": (
        lambda t: 2.0 * t - 4.0 * math.sqrt(t) + 2.0,
        lambda t: 2.0 - 2.0 / math.sqrt(t),
        2.0,
        2.0,
    ),
    "shifted_cosh": (
        lambda t: t * math.log(t) - 0.5 * t + 0.5 / t,
        lambda t: math.log(t) + 0.5 - 0.5 / (t * t),
        math.inf,
        math.inf,
    ),
}


def builtin_fdivergence(name: str) -> FDivergenceSpec:
    """Closed-form dual of a built-in loss."""
    if name not in _CLOSED_DUALS:
        raise UnknownLoss(f"no closed-form dual for {name!r}")
    f, fp, f0, fpinf = _CLOSED_DUALS[name]
    return FDivergenceSpec(name, f, fp, f0, fpinf)


def fdivergence_of(g: RegressionLoss) -> FDivergenceSpec:
    """Quadrature-backed dual of any loss; limits come from :func:`classify_loss`."""
    cls = classify_loss(g)
    f0 = math.inf if cls.zero_forcing else cls.probes_at_zero[-1]
    finf = math.inf if cls.zero_avoiding else cls.probes_at_infinity[-1]

    def f(t: float) -> float:
        return f_from_g(g, t)

    def f_prime(t: float) -> float:
        return f_from_g(g, t) / t + float(g.g_prime(math.log(t))) / t

    return FDivergenceSpec(f"dual({g.name})", f, f_prime, f0, finf, loss_code=g.code)


def kl_forward() -> FDivergenceSpec:
    return FDivergenceSpec("forward_kl", *_CLOSED_DUALS["linex1"])


def kl_reverse() -> FDivergenceSpec:
    return FDivergenceSpec("reverse_kl", *_CLOSED_DUALS["quadratic"])


def f_divergence(p: Mapping, q: Mapping, f: FDivergenceSpec) -> float:
    """``sum_x q(x) f(p(x)/q(x)) + f'(inf) p({q = 0})`` over unnormalised masses."""
    if set(p) != set(q):
        raise KeyMismatch("p and q must share the same keys")
    total = 0.0
    leak = 0.0
    for x, qx in q.items():
        px = p[x]
        if qx < 0 or px < 0 or not (math.isfinite(qx) and math.isfinite(px)):
            raise ValueError(f"masses must be finite and nonnegative at {x!r}")
        if qx > 0:
            if px == 0:
                if math.isinf(f.f_at_zero):
                    return math.inf
                total += qx * f.f_at_zero
            else:
                total += qx * f.f(px / qx)
        elif px > 0:
            leak += px
    if leak > 0:
        if math.isinf(f.f_prime_at_infinity):
            return math.inf
        total += f.f_prime_at_infinity * leak
    return total
