"""Logical constraints applied during synthesis.

A rule condition is a small boolean expression over variable names::

    AGE9 < 16
    AGE9 < 16 and SEX9 == "F"
    MSTAT9 in ("married", "divorced") or missing(AGE0)

Only comparisons, ``and``/``or``/``not``, ``in``/``not in`` with literal
tuples or lists, and ``missing(NAME)`` are accepted.
"""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .tabular import DataTable, _code_text


class RuleError(ValueError):
    pass


_CMP = {
    ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt, ast.GtE: operator.ge,
    ast.Eq: operator.eq, ast.NotEq: operator.ne,
}


def _check(node, names: set):
    if isinstance(node, ast.Expression):
        return _check(node.body, names)
    if isinstance(node, ast.BoolOp):
        for v in node.values:
            _check(v, names)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.Not):
        _check(node.operand, names)
    elif isinstance(node, ast.Compare):
        for op in node.ops:
            if type(op) not in _CMP and not isinstance(op, (ast.In, ast.NotIn)):
                raise RuleError(f"unsupported operator {type(op).__name__}")
        for v in [node.left, *node.comparators]:
            _check(v, names)
    elif isinstance(node, ast.Name):
        names.add(node.id)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float, str)) or isinstance(node.value, bool):
            raise RuleError(f"unsupported literal {node.value!r}")
    elif isinstance(node, (ast.Tuple, ast.List)):
        for v in node.elts:
            if not isinstance(v, ast.Constant):
                raise RuleError("membership lists must hold literals")
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub) and isinstance(node.operand, ast.Constant):
        pass
    elif (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "missing"
          and len(node.args) == 1 and isinstance(node.args[0], ast.Name) and not node.keywords):
        names.add(node.args[0].id)
    else:
        raise RuleError(f"unsupported expression element {type(node).__name__}")
    return names


def parse_condition(text: str):
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as e:
        raise RuleError(f"cannot parse condition {text!r}: {e.msg}") from None
    return tree, frozenset(_check(tree, set()))


def _eval(node, table: DataTable):
    if isinstance(node, ast.Expression):
        return _eval(node.body, table)
    if isinstance(node, ast.BoolOp):
        vals = [np.asarray(_eval(v, table), dtype=bool) for v in node.values]
        f = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
        out = vals[0]
        for v in vals[1:]:
            out = f(out, v)
        return out
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.Not):
        return ~np.asarray(_eval(node.operand, table), dtype=bool)
    if isinstance(node, ast.UnaryOp):
        return -node.operand.value
    if isinstance(node, ast.Compare):
        left = _eval(node.left, table)
        out = None
        for op, comp in zip(node.ops, node.comparators):
            right = _eval(comp, table)
            if isinstance(op, (ast.In, ast.NotIn)):
                r = np.isin(np.asarray(left, dtype=object), np.asarray(right, dtype=object))
                r = ~r if isinstance(op, ast.NotIn) else r
            else:
                with np.errstate(invalid="ignore"):
                    r = np.asarray(_CMP[type(op)](left, right), dtype=bool)
            out = r if out is None else out & r
            left = right
        return out
    if isinstance(node, ast.Name):
        var = table.schema[node.id]
        if var.is_categorical:
            return table.labels(node.id)
        return table.values(node.id)
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, (ast.Tuple, ast.List)):
        return [_code_text(e.value) if isinstance(e.value, str) else e.value for e in node.elts]
    if isinstance(node, ast.Call):
        return table.missing(node.args[0].id)
    raise RuleError(f"unsupported expression element {type(node).__name__}")


@dataclass(frozen=True)
class Rule:
    """Where ``condition`` holds, ``target`` is forced to ``value``."""

    condition: str
    target: str
    value: Any
    _tree: Any = field(default=None, repr=False, compare=False)
    variables: frozenset = field(default=frozenset(), compare=False)

    def __post_init__(self):
        tree, names = parse_condition(self.condition)
        object.__setattr__(self, "_tree", tree)
        object.__setattr__(self, "variables", names)

    def holds(self, table: DataTable) -> np.ndarray:
        out = np.asarray(_eval(self._tree, table), dtype=bool)
        if out.ndim == 0:
            out = np.full(table.n_rows, bool(out))
        return out

    def describe(self) -> str:
        return f"{self.condition} => {self.target} := {self.value}"
