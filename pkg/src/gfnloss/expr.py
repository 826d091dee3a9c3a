"""A tiny arithmetic grammar for user-defined regression losses.

Expressions are written in ``t`` with ``+ - * / **``, ``exp``, ``log``,
``sqrt``, ``pow``, ``cosh``, ``sinh`` and the constants ``e`` and ``pi``.  They
are parsed once with :mod:`ast` and can then be evaluated on floats, numpy
arrays, torch tensors, or second-order jets (for exact g' and g'').
"""

from __future__ import annotations

import ast
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from gfnloss.errors import ExpressionError

_FUNCS = ("exp", "log", "sqrt", "pow", "cosh", "sinh")
_CONSTS = {"e": math.e, "pi": math.pi}


@dataclass(frozen=True)
class Jet:
    """Truncated Taylor jet ``(value, first, second)`` derivative triple."""

    v: float
    d1: float = 0.0
    d2: float = 0.0

    @staticmethod
    def lift(x) -> Jet:
        return x if isinstance(x, Jet) else Jet(float(x))

    def __add__(self, o):
        o = Jet.lift(o)
        return Jet(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.d1, -self.d2)

    def __pos__(self):
        return self

    def __sub__(self, o):
        return self + (-Jet.lift(o))

    def __rsub__(self, o):
        return Jet.lift(o) - self

    def __mul__(self, o):
        o = Jet.lift(o)
        return Jet(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        )

    __rmul__ = __mul__

    def recip(self) -> Jet:
        inv = 1.0 / self.v
        return Jet(inv, -self.d1 * inv * inv, (2.0 * self.d1 * self.d1 * inv - self.d2) * inv * inv)

    def __truediv__(self, o):
        return self * Jet.lift(o).recip()

    def __rtruediv__(self, o):
        return Jet.lift(o) * self.recip()

    def __pow__(self, o):
        if isinstance(o, Jet):
            return jet_exp(o * jet_log(self))
        p = float(o)
        if p == 0.0:
            return Jet(1.0)
        fp = p * self.v ** (p - 1.0)
        fpp = 0.0 if p == 1.0 else p * (p - 1.0) * self.v ** (p - 2.0)
        return Jet(self.v**p, fp * self.d1, fpp * self.d1 * self.d1 + fp * self.d2)

    def __rpow__(self, o):
        return jet_exp(self * math.log(float(o)))


def _chain(x: Jet, f: float, fp: float, fpp: float) -> Jet:
    return Jet(f, fp * x.d1, fpp * x.d1 * x.d1 + fp * x.d2)


def jet_exp(x: Jet) -> Jet:
    ev = math.exp(x.v)
    return _chain(x, ev, ev, ev)


def jet_log(x: Jet) -> Jet:
    return _chain(x, math.log(x.v), 1.0 / x.v, -1.0 / (x.v * x.v))


def jet_sqrt(x: Jet) -> Jet:
    r = math.sqrt(x.v)
    return _chain(x, r, 0.5 / r, -0.25 / (r * x.v))


def _numpy_ops():
    return {"exp": np.exp, "log": np.log, "sqrt": np.sqrt, "pow": np.power, "cosh": np.cosh, "sinh": np.sinh}


def _torch_ops():
    import torch

    def lift(fn):
        return lambda *xs: fn(*(x if torch.is_tensor(x) else torch.tensor(x, dtype=torch.float64) for x in xs))

    return {name: lift(getattr(torch, name)) for name in _FUNCS}


def _jet_ops():
    return {
        "exp": lambda x: jet_exp(Jet.lift(x)),
        "log": lambda x: jet_log(Jet.lift(x)),
        "sqrt": lambda x: jet_sqrt(Jet.lift(x)),
        "pow": lambda a, b: Jet.lift(a) ** b,
        "cosh": lambda x: 0.5 * (jet_exp(Jet.lift(x)) + jet_exp(-Jet.lift(x))),
        "sinh": lambda x: 0.5 * (jet_exp(Jet.lift(x)) - jet_exp(-Jet.lift(x))),
    }


class Expression:
    """A parsed loss expression in the single variable ``t``."""

    def __init__(self, source: str):
        self.source = source
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node: ast.AST) -> None:
        if isinstance(node, ast.BinOp):
            if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ExpressionError(f"only calls to {', '.join(_FUNCS)} are allowed")
            want = 2 if node.func.id == "pow" else 1
            if len(node.args) != want:
                raise ExpressionError(f"{node.func.id} takes {want} argument(s)")
            for a in node.args:
                self._check(a)
        elif isinstance(node, ast.Name):
            if node.id != "t" and node.id not in _CONSTS:
                raise ExpressionError(f"unknown name {node.id!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"constant {node.value!r} is not a number")
        else:
            raise ExpressionError(f"syntax {type(node).__name__} not allowed")

    def _eval(self, node, t, ops):
        if isinstance(node, ast.BinOp):
            a = self._eval(node.left, t, ops)
            b = self._eval(node.right, t, ops)
            op = node.op
            if isinstance(op, ast.Add):
                return a + b
            if isinstance(op, ast.Sub):
                return a - b
            if isinstance(op, ast.Mult):
                return a * b
            if isinstance(op, ast.Div):
                return a / b
            return a**b
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, t, ops)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return ops[node.func.id](*(self._eval(a, t, ops) for a in node.args))
        if isinstance(node, ast.Name):
            return t if node.id == "t" else _CONSTS[node.id]
        return float(node.value)

    def numpy(self, t):
        return self._eval(self._tree, t, _numpy_ops())

    def torch(self, t):
        return self._eval(self._tree, t, _torch_ops())

    def jet(self, t: float) -> Jet:
        out = self._eval(self._tree, Jet(float(t), 1.0, 0.0), _jet_ops())
        return Jet.lift(out)

    def derivative(self, order: int) -> Callable[[float], float]:
        if order == 1:
            return lambda t: self.jet(t).d1
        if order == 2:
            return lambda t: self.jet(t).d2
        raise ValueError("only first and second derivatives are available")
