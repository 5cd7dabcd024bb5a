"""A small arithmetic grammar for coefficient expressions in config files.

Expressions are parsed with :mod:`ast` and only a whitelist of node types is
accepted, so nothing beyond arithmetic on named variables is ever evaluated.
"""

from __future__ import annotations

import ast

import numpy as np

from .errors import ConfigError

FUNCTIONS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "pow": np.power,
}
CONSTANTS = {"pi": np.pi}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}
_UNARY = {ast.USub: np.negative, ast.UAdd: np.positive}


class Expression:
    """Compiled expression evaluated on columns of a batch.

    Parameters
    ----------
    text : str
        Source such as ``"x1 - x1**3"``.
    variables : sequence of str
        Allowed variable names, in column order.
    """

    def __init__(self, text, variables):
        self.text = str(text)
        self.variables = list(variables)
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {self.text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ConfigError(f"operator {type(node.op).__name__} not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                raise ConfigError(f"operator {type(node.op).__name__} not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                raise ConfigError(f"unknown function in {self.text!r}")
            nargs = 2 if node.func.id == "pow" else 1
            if len(node.args) != nargs:
                raise ConfigError(f"{node.func.id} takes {nargs} argument(s)")
            for a in node.args:
                self._check(a)
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in CONSTANTS:
                raise ConfigError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ConfigError(f"only numeric literals allowed in {self.text!r}")
        else:
            raise ConfigError(f"{type(node).__name__} not allowed in {self.text!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Call):
            return FUNCTIONS[node.func.id](*(self._eval(a, env) for a in node.args))
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else CONSTANTS[node.id]
        return float(node.value)

    def __call__(self, columns):
        """Evaluate on ``columns`` of shape ``(B, len(variables))``; returns ``(B,)``."""
        columns = np.asarray(columns, dtype=np.float64)
        env = {name: columns[:, i] for i, name in enumerate(self.variables)}
        out = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (columns.shape[0],))

    def __repr__(self):
        return f"Expression({self.text!r})"


def compile_vector(texts, variables):
    """List of component expressions as one batch function ``(B, d) -> (B, len(texts))``."""
    exprs = [Expression(t, variables) for t in texts]

    def func(x):
        x = np.asarray(x, dtype=np.float64)
        return np.stack([e(x) for e in exprs], axis=1)

    return func


def compile_matrix(rows, variables):
    """Nested list of expressions as ``(B, d) -> (B, r, c)``."""
    exprs = [[Expression(t, variables) for t in row] for row in rows]
    ncols = {len(r) for r in exprs}
    if len(ncols) != 1:
        raise ConfigError("matrix rows have different lengths")

    def func(x):
        x = np.asarray(x, dtype=np.float64)
        return np.stack([np.stack([e(x) for e in row], axis=1) for row in exprs], axis=1)

    return func
