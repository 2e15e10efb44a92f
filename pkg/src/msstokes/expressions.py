"""Tiny arithmetic-expression evaluator for boundary/source data.

Accepts literals, x, y, parentheses and + - * /. Parsed once through the ast
module with a strict whitelist; evaluation is vectorized over numpy arrays.
"""

from __future__ import annotations

import ast

import numpy as np

from .errors import ConfigError

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract,
           ast.Mult: np.multiply, ast.Div: np.divide}


def compile_expression(text):
    """Compile one expression of (x, y) into a vectorized callable."""
    try:
        tree = ast.parse(text.replace("×", "*").replace("÷", "/"), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression '{text}': {exc}") from exc

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            val = float(node.value)
            return lambda x, y: val
        if isinstance(node, ast.Name):
            if node.id == "x":
                return lambda x, y: x
            if node.id == "y":
                return lambda x, y: y
            raise ConfigError(f"unknown name '{node.id}' in expression '{text}'")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            left, right = build(node.left), build(node.right)
            return lambda x, y: op(left(x, y), right(x, y))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            inner = build(node.operand)
            return lambda x, y: -inner(x, y)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.UAdd):
            return build(node.operand)
        raise ConfigError(f"unsupported syntax in expression '{text}'")

    return build(tree)


def vector_field(expr_pair):
    """Callable pts (k,2) -> (k,2) from two component expressions."""
    fx = compile_expression(str(expr_pair[0]))
    fy = compile_expression(str(expr_pair[1]))

    def fun(pts):
        x, y = pts[:, 0], pts[:, 1]
        out = np.empty((len(pts), 2))
        out[:, 0] = fx(x, y)
        out[:, 1] = fy(x, y)
        return out
    return fun
