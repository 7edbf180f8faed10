"""Policy evaluation over record streams.

Conditions evaluate against FlatRecords with absent-attribute collapse:
any predicate touching an absent attribute is false, and only `exists`
asserts presence.  Matching a value against list patterns (`in`) accepts
either the verbatim value or the basename of its first token, so
(bash, sh) matches an ancestor command "/bin/bash" while path lists
still match verbatim.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

from .model import Record, Header
from .policy import (
    And,
    Atom,
    AttrRef,
    Binary,
    Exists,
    InlineList,
    MacroRef,
    MatchRule,
    Not,
    Or,
    PolicyAst,
    RELATIONAL_OPS,
)
from .store import ABSENT, EntityStore, FlatRecord, flatten
from .model import EVENT_TYPES, FLOW_TYPES


@dataclass(frozen=True)
class Finding:
    rule_name: str
    record: Record
    flat: FlatRecord
    shown: dict
    added_tags: tuple[str, ...] = ()


def _basename_of_first_token(value: str) -> str:
    first = value.split()[0] if value.split() else ""
    return posixpath.basename(first)


def pmatch(value: str, patterns: Iterable[str]) -> bool:
    """Prefix match of patterns against the executable basename."""
    base = _basename_of_first_token(value)
    return any(base.startswith(p) for p in patterns)


def _member(value: str, patterns: Iterable[str]) -> bool:
    base = _basename_of_first_token(value)
    return any(value == p or base == p for p in patterns)


def _resolve(node, flat: FlatRecord, ast: PolicyAst):
    if isinstance(node, AttrRef):
        return flat.get(node.name, node.k)
    if isinstance(node, InlineList):
        return list(node.values)
    # Atom: a declared list name or a literal
    if node.text in ast.lists:
        return list(ast.lists[node.text])
    return node.text


def _as_elements(value) -> list:
    return value if isinstance(value, list) else [value]


def _eval_binary(b: Binary, flat: FlatRecord, ast: PolicyAst) -> bool:
    lhs = _resolve(b.lhs, flat, ast)
    if lhs is ABSENT:
        return False
    rhs = _resolve(b.rhs, flat, ast)
    if rhs is ABSENT:
        return False
    op = b.op
    elements = _as_elements(lhs)
    if op == "in":
        patterns = [str(p) for p in _as_elements(rhs)]
        if isinstance(lhs, int) or all(isinstance(e, int) for e in elements):
            return any(int(e) in {int(p) for p in patterns} for e in elements)
        return any(_member(str(e), patterns) for e in elements)
    if op == "pmatch":
        patterns = [str(p) for p in _as_elements(rhs)]
        return any(pmatch(str(e), patterns) for e in elements)
    if op == "contains":
        needle = str(rhs)
        return any(needle in str(e) for e in elements)
    if op == "startswith":
        prefix = str(rhs)
        return any(str(e).startswith(prefix) for e in elements)
    if op in RELATIONAL_OPS:
        try:
            left = [int(e) for e in elements]
            right = int(rhs)
        except (TypeError, ValueError):
            return False
        table = {
            "<": lambda a: a < right,
            "<=": lambda a: a <= right,
            ">": lambda a: a > right,
            ">=": lambda a: a >= right,
        }
        return any(table[op](a) for a in left)
    # = and !=
    if isinstance(lhs, int) or (isinstance(rhs, int)):
        try:
            hit = any(int(e) == int(rhs) for e in elements)
        except (TypeError, ValueError):
            hit = False
    else:
        hit = any(str(e) == str(rhs) for e in elements)
    return hit if op == "=" else not hit


def eval_condition(cond, flat: FlatRecord, ast: PolicyAst) -> bool:
    if isinstance(cond, Or):
        return any(eval_condition(c, flat, ast) for c in cond.children)
    if isinstance(cond, And):
        return all(eval_condition(c, flat, ast) for c in cond.children)
    if isinstance(cond, Not):
        return not eval_condition(cond.child, flat, ast)
    if isinstance(cond, Exists):
        return flat.get(cond.attr.name, cond.attr.k) is not ABSENT
    if isinstance(cond, Binary):
        return _eval_binary(cond, flat, ast)
    if isinstance(cond, MacroRef):
        return eval_condition(ast.macros[cond.name], flat, ast)
    raise ValueError("malformed condition")


def _shown_values(rule: MatchRule, flat: FlatRecord) -> dict:
    shown = {}
    for attr in rule.show:
        value = flat.get(attr.name, attr.k)
        key = attr.name if attr.k is None else f"{attr.name}({attr.k})"
        shown[key] = None if value is ABSENT else value
    return shown


def run_policy(
    ast: PolicyAst, records: Iterable[Record]
) -> Iterator[tuple[Record, list[Finding]]]:
    """Evaluate rules over a stream, single pass.

    Yields each record (with tag-rule labels applied) together with the
    findings it produced, in rule order.  Entities and the header pass
    through untouched and feed the entity index.
    """
    store = EntityStore()
    behavior = EVENT_TYPES + FLOW_TYPES
    for rec in records:
        if isinstance(rec, Header) or not isinstance(rec, behavior):
            store.add(rec)
            yield rec, []
            continue
        flat = flatten(rec, store)
        findings: list[Finding] = []
        new_tags: list[str] = []
        for rule in ast.rules:
            if not eval_condition(rule.cond, flat, ast):
                continue
            if isinstance(rule, MatchRule):
                findings.append(Finding(rule.name, rec, flat, _shown_values(rule, flat)))
            else:
                added = tuple(
                    label for label in rule.labels
                    if label not in rec.tags and label not in new_tags
                )
                new_tags.extend(added)
                if added:
                    findings.append(Finding(rule.name, rec, flat, {}, added))
        if new_tags:
            rec = replace(rec, tags=rec.tags + tuple(new_tags))
        yield rec, findings
