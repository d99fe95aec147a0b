"""Small arithmetic-expression language for scalar fields on a group.

Grammar: numbers, ``+ - * / ^`` (``^`` is power), parentheses, the functions
``abs exp sin cos sqrt`` and the variables ``x1..xm``, ``rho`` (homogeneous gauge),
``qnorm`` (power-sum quasi-norm), ``hnorm`` (horizontal norm) and ``pi``.
Evaluation is vectorized over point arrays.
"""
from __future__ import annotations

import ast
import operator
import re

import numpy as np

from .algebra import StratifiedAlgebra, horizontal_part, quasi_norm
from .errors import ParseError

FUNCTIONS = {"abs": np.abs, "exp": np.exp, "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt}
BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
          ast.Pow: operator.pow}
UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _gauge(alg: StratifiedAlgebra, x):
    if alg.step == 1:
        return np.linalg.norm(x, axis=-1)
    return quasi_norm(alg, x, "heisenberg_rho")


class Expression:
    def __init__(self, text: str, alg: StratifiedAlgebra):
        self.text = text
        self.alg = alg
        if re.search(r"\*\*", text):
            raise ParseError("use '^' for powers", 1, text.index("**") + 1)
        try:
            self.tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ParseError(f"invalid expression: {exc.msg}", 1, exc.offset or 0) from exc
        self.variables = set()
        self._validate(self.tree.body)

    def _names(self):
        return {f"x{i + 1}" for i in range(self.alg.dim)} | {"rho", "qnorm", "hnorm", "pi"}

    def _validate(self, node):
        col = getattr(node, "col_offset", 0) + 1
        if isinstance(node, ast.BinOp) and type(node.op) in BINOPS:
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in UNOPS:
            self._validate(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ParseError("unknown function", 1, col)
            if len(node.args) != 1 or node.keywords:
                raise ParseError("functions take exactly one argument", 1, col)
            self._validate(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in self._names():
                raise ParseError(f"unknown variable {node.id!r}", 1, col)
            self.variables.add(node.id)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            pass
        else:
            raise ParseError(f"unsupported syntax {type(node).__name__}", 1, col)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        env = {"pi": np.pi}
        for i in range(self.alg.dim):
            env[f"x{i + 1}"] = x[..., i]
        if "rho" in self.variables:
            env["rho"] = _gauge(self.alg, x)
        if "qnorm" in self.variables:
            env["qnorm"] = quasi_norm(self.alg, x)
        if "hnorm" in self.variables:
            env["hnorm"] = horizontal_part(self.alg, x)[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self._eval(self.tree.body, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return UNOPS[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Call):
            return FUNCTIONS[node.func.id](self._eval(node.args[0], env))
        if isinstance(node, ast.Name):
            return env[node.id]
        return float(node.value)

    def __repr__(self):
        return f"Expression({self.text!r})"


def parse_expression(text: str, alg: StratifiedAlgebra) -> Expression:
    return Expression(text, alg)
