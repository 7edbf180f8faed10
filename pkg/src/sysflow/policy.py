"""Declarative processing language: lists, macros and match/tag rules.

Statement forms, one per line (`\\` continues a line, `#` starts a comment):

    name := (value, value, ...)          list declaration
    name := condition                    macro declaration
    match condition [show attr, ...]     alerting rule
    tag condition with [label, ...]      enrichment rule

Conditions combine terms with `or` and `and` (and binds tighter); a term
is `not term`, a macro name, `attr exists`, or a binary predicate over
an sf.* attribute: in, pmatch, contains, startswith, =, !=, <, <=, >, >=.
Grouping comes from macros; the grammar has no parentheses around
conditions, so a parenthesized operand is always a value list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .model import SysflowError
from .store import ATTRIBUTES

KEYWORDS = {
    "match", "tag", "show", "with", "and", "or", "not", "exists",
    "in", "pmatch", "contains", "startswith",
}
BINARY_OPS = {"in", "pmatch", "contains", "startswith", "=", "!=", "<", "<=", ">", ">="}
RELATIONAL_OPS = {"<", "<=", ">", ">="}
ACHAIN_ATTR = "sf.proc.achain"


class PolicyError(SysflowError):
    """Compile-time policy problem, located at line:col."""

    def __init__(self, msg: str, line: int, col: int) -> None:
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


# -- AST ---------------------------------------------------------------------
# Source locations are excluded from equality so a pretty-printed policy
# re-parses to an equal AST.

@dataclass(frozen=True)
class AttrRef:
    name: str
    k: int | None = None  # achain(k) index
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Atom:
    """Bare or quoted scalar operand; may name a declared list."""

    text: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class InlineList:
    values: tuple[str, ...]


@dataclass(frozen=True)
class MacroRef:
    name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Exists:
    attr: AttrRef


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: AttrRef
    rhs: object  # Atom | InlineList | AttrRef


@dataclass(frozen=True)
class Not:
    child: object


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


Condition = object


@dataclass(frozen=True)
class MatchRule:
    name: str
    cond: Condition
    show: tuple[AttrRef, ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TagRule:
    name: str
    cond: Condition
    labels: tuple[str, ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class PolicyAst:
    lists: dict
    macros: dict
    rules: tuple


# -- lexer -------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # name, string, punct, op, assign
    text: str
    line: int
    col: int


_PUNCT = "()[],"
_BARE_END = set(" \t()[],\"#") | {"=", "<", ">", "!"}


def _lex_line(text: str, line: int) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c in " \t":
            i += 1
            continue
        if c == "#":
            break
        col = i + 1
        if c == '"':
            end = text.find('"', i + 1)
            if end < 0:
                raise PolicyError("unterminated string", line, col)
            tokens.append(_Token("string", text[i + 1:end], line, col))
            i = end + 1
            continue
        if c in _PUNCT:
            tokens.append(_Token("punct", c, line, col))
            i += 1
            continue
        if c == ":" and text.startswith(":=", i):
            tokens.append(_Token("assign", ":=", line, col))
            i += 2
            continue
        if c in "=<>!":
            if text.startswith(("!=", "<=", ">="), i):
                tokens.append(_Token("op", text[i:i + 2], line, col))
                i += 2
                continue
            if c == "!":
                raise PolicyError("stray '!'", line, col)
            tokens.append(_Token("op", c, line, col))
            i += 1
            continue
        j = i
        while j < n and text[j] not in _BARE_END:
            if text[j] == ":" and text.startswith(":=", j):
                break
            j += 1
        if j == i:
            raise PolicyError(f"unexpected character {c!r}", line, col)
        tokens.append(_Token("name", text[i:j], line, col))
        i = j
    return tokens


def _logical_lines(text: str) -> Iterable[tuple[int, str]]:
    """Join backslash-continued lines, keeping the first line's number."""
    pending = ""
    start = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not pending:
            start = lineno
        line = raw.rstrip()
        if line.endswith("\\"):
            pending += line[:-1] + " "
            continue
        yield start, pending + line
        pending = ""
    if pending:
        yield start, pending


# -- parser ------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[_Token], line: int) -> None:
        self.tokens = tokens
        self.pos = 0
        self.line = line

    def peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expect: str | None = None) -> _Token:
        tok = self.peek()
        if tok is None:
            raise PolicyError(
                f"unexpected end of statement{', expected ' + expect if expect else ''}",
                self.line, self.tokens[-1].col + len(self.tokens[-1].text) if self.tokens else 1,
            )
        self.pos += 1
        return tok

    def expect_punct(self, char: str) -> _Token:
        tok = self.next(repr(char))
        if tok.kind != "punct" or tok.text != char:
            raise PolicyError(f"expected {char!r}, got {tok.text!r}", tok.line, tok.col)
        return tok

    def at_name(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "name" and tok.text == text

    # -- conditions --

    def parse_condition(self):
        parts = [self.parse_and()]
        while self.at_name("or"):
            self.next()
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and(self):
        parts = [self.parse_term()]
        while self.at_name("and"):
            self.next()
            parts.append(self.parse_term())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_term(self):
        tok = self.peek()
        if tok is None:
            raise PolicyError("expected a condition", self.line, 1)
        if tok.kind == "name" and tok.text == "not":
            self.next()
            return Not(self.parse_term())
        if tok.kind == "name" and tok.text.startswith("sf."):
            attr = self.parse_attr()
            op_tok = self.peek()
            if op_tok is not None and op_tok.kind == "name" and op_tok.text == "exists":
                self.next()
                return Exists(attr)
            if op_tok is None or not (
                (op_tok.kind == "name" and op_tok.text in BINARY_OPS)
                or (op_tok.kind == "op")
            ):
                raise PolicyError(
                    f"attribute {attr.name} needs an operator", tok.line, tok.col
                )
            self.next()
            return Binary(op_tok.text, attr, self.parse_operand())
        if tok.kind in ("name", "string"):
            if tok.text in KEYWORDS:
                raise PolicyError(f"unexpected keyword {tok.text!r}", tok.line, tok.col)
            self.next()
            return MacroRef(tok.text, tok.line, tok.col)
        raise PolicyError(f"unexpected token {tok.text!r}", tok.line, tok.col)

    def parse_attr(self) -> AttrRef:
        tok = self.next("attribute")
        name = tok.text
        k = None
        nxt = self.peek()
        if nxt is not None and nxt.kind == "punct" and nxt.text == "(" and name == ACHAIN_ATTR:
            self.next()
            num = self.next("ancestor index")
            if num.kind != "name" or not num.text.isdigit():
                raise PolicyError("achain index must be an integer", num.line, num.col)
            k = int(num.text)
            if k < 1:
                raise PolicyError("achain index is 1-based", num.line, num.col)
            self.expect_punct(")")
        return AttrRef(name, k, tok.line, tok.col)

    def parse_operand(self):
        tok = self.peek()
        if tok is None:
            raise PolicyError("operator needs an operand", self.line, 1)
        if tok.kind == "punct" and tok.text == "(":
            return InlineList(tuple(self.parse_value_list(")")))
        if tok.kind == "name" and tok.text.startswith("sf."):
            return self.parse_attr()
        if tok.kind in ("name", "string"):
            self.next()
            return Atom(tok.text, tok.line, tok.col)
        raise PolicyError(f"unexpected token {tok.text!r}", tok.line, tok.col)

    def parse_value_list(self, closing: str) -> list[str]:
        self.next()  # consume opener
        values: list[str] = []
        while True:
            tok = self.next("a value")
            if tok.kind == "punct" and tok.text == closing and not values:
                return values  # empty list
            if tok.kind not in ("name", "string"):
                raise PolicyError(f"expected a value, got {tok.text!r}", tok.line, tok.col)
            values.append(tok.text)
            sep = self.next(f"',' or {closing!r}")
            if sep.kind == "punct" and sep.text == closing:
                return values
            if not (sep.kind == "punct" and sep.text == ","):
                raise PolicyError(f"expected ',' or {closing!r}, got {sep.text!r}", sep.line, sep.col)

    def expect_end(self) -> None:
        tok = self.peek()
        if tok is not None:
            raise PolicyError(f"unexpected trailing {tok.text!r}", tok.line, tok.col)


def _parse_statement(tokens: list[_Token], line: int, rule_idx: int):
    p = _Parser(tokens, line)
    head = tokens[0]
    if head.kind == "name" and head.text == "match":
        p.next()
        cond = p.parse_condition()
        show: tuple[AttrRef, ...] = ()
        if p.at_name("show"):
            p.next()
            attrs = [p.parse_attr()]
            while p.peek() is not None and p.peek().kind == "punct" and p.peek().text == ",":
                p.next()
                attrs.append(p.parse_attr())
            show = tuple(attrs)
        p.expect_end()
        return MatchRule(f"rule_{rule_idx}", cond, show, line)
    if head.kind == "name" and head.text == "tag":
        p.next()
        cond = p.parse_condition()
        if not p.at_name("with"):
            tok = p.peek()
            raise PolicyError(
                "tag rule needs 'with [labels]'",
                tok.line if tok else line, tok.col if tok else 1,
            )
        p.next()
        nxt = p.peek()
        if nxt is None or nxt.kind != "punct" or nxt.text != "[":
            raise PolicyError("labels must be bracketed", line, nxt.col if nxt else 1)
        labels = tuple(p.parse_value_list("]"))
        if not labels:
            raise PolicyError("tag rule needs at least one label", head.line, head.col)
        p.expect_end()
        return TagRule(f"rule_{rule_idx}", cond, labels, line)
    # declaration: name := ...
    if head.kind not in ("name", "string") or head.text in KEYWORDS:
        raise PolicyError(f"expected a rule or declaration, got {head.text!r}", head.line, head.col)
    if head.text.startswith("sf."):
        raise PolicyError("names may not start with 'sf.'", head.line, head.col)
    p.next()
    assign = p.next("':='")
    if assign.kind != "assign":
        raise PolicyError(f"expected ':=', got {assign.text!r}", assign.line, assign.col)
    nxt = p.peek()
    if nxt is None:
        raise PolicyError("declaration needs a body", assign.line, assign.col + 2)
    if nxt.kind == "punct" and nxt.text == "(":
        values = tuple(p.parse_value_list(")"))
        p.expect_end()
        return ("list", head, values)
    cond = p.parse_condition()
    p.expect_end()
    return ("macro", head, cond)


def parse_policy(text: str) -> PolicyAst:
    """Parse and validate a policy; raises PolicyError with location."""
    lists: dict[str, tuple[str, ...]] = {}
    macros: dict[str, Condition] = {}
    rules: list = []
    macro_pos: dict[str, tuple[int, int]] = {}
    for line, logical in _logical_lines(text):
        tokens = _lex_line(logical, line)
        if not tokens:
            continue
        stmt = _parse_statement(tokens, line, len(rules) + 1)
        if isinstance(stmt, (MatchRule, TagRule)):
            rules.append(stmt)
            continue
        kind, head, body = stmt
        if head.text in lists or head.text in macros:
            raise PolicyError(f"duplicate name {head.text!r}", head.line, head.col)
        if kind == "list":
            lists[head.text] = body
        else:
            macros[head.text] = body
            macro_pos[head.text] = (head.line, head.col)
    ast = PolicyAst(lists, macros, tuple(rules))
    _compile_check(ast, macro_pos)
    return ast


def merge_policies(asts: Iterable[PolicyAst]) -> PolicyAst:
    """Concatenate parsed policy files in order, renumbering rules."""
    lists: dict = {}
    macros: dict = {}
    rules: list = []
    for ast in asts:
        for name, values in ast.lists.items():
            if name in lists or name in macros:
                raise PolicyError(f"duplicate name {name!r} across files", 1, 1)
            lists[name] = values
        for name, cond in ast.macros.items():
            if name in lists or name in macros:
                raise PolicyError(f"duplicate name {name!r} across files", 1, 1)
            macros[name] = cond
        for rule in ast.rules:
            renamed = f"rule_{len(rules) + 1}"
            if isinstance(rule, MatchRule):
                rules.append(MatchRule(renamed, rule.cond, rule.show, rule.line))
            else:
                rules.append(TagRule(renamed, rule.cond, rule.labels, rule.line))
    merged = PolicyAst(lists, macros, tuple(rules))
    _compile_check(merged, {})
    return merged


# -- compile-time validation ---------------------------------------------------

def _attr_kind(attr: AttrRef) -> str:
    if attr.name == ACHAIN_ATTR:
        return "str" if attr.k is not None else "strlist"
    return ATTRIBUTES[attr.name]


def _check_attr(attr: AttrRef, ast: PolicyAst) -> None:
    if attr.name not in ATTRIBUTES:
        raise PolicyError(f"unknown attribute {attr.name!r}", attr.line, attr.col)
    if attr.k is not None and attr.name != ACHAIN_ATTR:
        raise PolicyError(f"{attr.name} takes no index", attr.line, attr.col)


def _rhs_is_list(rhs, ast: PolicyAst) -> bool:
    return isinstance(rhs, InlineList) or (
        isinstance(rhs, Atom) and rhs.text in ast.lists
    )


def _check_numeric_values(values: Iterable[str], where: Atom | AttrRef) -> None:
    for v in values:
        try:
            int(v)
        except ValueError:
            raise PolicyError(
                f"numeric comparison against non-numeric value {v!r}",
                where.line, where.col,
            ) from None


def _check_binary(b: Binary, ast: PolicyAst) -> None:
    _check_attr(b.lhs, ast)
    kind = _attr_kind(b.lhs)
    rhs = b.rhs
    if isinstance(rhs, AttrRef):
        _check_attr(rhs, ast)
    if b.op in ("in", "pmatch"):
        if not _rhs_is_list(rhs, ast):
            raise PolicyError(
                f"'{b.op}' needs a value list or list name",
                rhs.line if isinstance(rhs, (Atom, AttrRef)) else b.lhs.line,
                rhs.col if isinstance(rhs, (Atom, AttrRef)) else b.lhs.col,
            )
        if b.op == "pmatch" and kind not in ("str", "strlist"):
            raise PolicyError("'pmatch' applies to string attributes", b.lhs.line, b.lhs.col)
        if b.op == "in" and kind == "int":
            values = rhs.values if isinstance(rhs, InlineList) else ast.lists[rhs.text]
            _check_numeric_values(values, rhs if isinstance(rhs, Atom) else b.lhs)
        return
    if isinstance(rhs, InlineList) or (isinstance(rhs, Atom) and rhs.text in ast.lists):
        raise PolicyError(f"'{b.op}' takes a single value", b.lhs.line, b.lhs.col)
    if b.op in ("contains", "startswith"):
        if kind == "int":
            raise PolicyError(f"'{b.op}' applies to string attributes", b.lhs.line, b.lhs.col)
        if isinstance(rhs, AttrRef) and _attr_kind(rhs) != "str":
            raise PolicyError(f"'{b.op}' needs a string operand", rhs.line, rhs.col)
        return
    # relational and equality
    if b.op in RELATIONAL_OPS and kind != "int":
        raise PolicyError(f"'{b.op}' applies to numeric attributes", b.lhs.line, b.lhs.col)
    if isinstance(rhs, AttrRef):
        rhs_kind = _attr_kind(rhs)
        want = "int" if kind == "int" else "str"
        if (rhs_kind == "int") != (kind == "int"):
            raise PolicyError(
                f"cannot compare {kind} attribute with {rhs_kind} attribute",
                rhs.line, rhs.col,
            )
        return
    if kind == "int" or b.op in RELATIONAL_OPS:
        _check_numeric_values([rhs.text], rhs)


def _walk_condition(cond, ast: PolicyAst, seen_macros: tuple) -> None:
    if isinstance(cond, Or) or isinstance(cond, And):
        for child in cond.children:
            _walk_condition(child, ast, seen_macros)
    elif isinstance(cond, Not):
        _walk_condition(cond.child, ast, seen_macros)
    elif isinstance(cond, Exists):
        _check_attr(cond.attr, ast)
    elif isinstance(cond, Binary):
        _check_binary(cond, ast)
    elif isinstance(cond, MacroRef):
        if cond.name not in ast.macros:
            raise PolicyError(f"unknown macro {cond.name!r}", cond.line, cond.col)
        if cond.name in seen_macros:
            chain = " -> ".join(seen_macros + (cond.name,))
            raise PolicyError(f"macro cycle: {chain}", cond.line, cond.col)
        _walk_condition(ast.macros[cond.name], ast, seen_macros + (cond.name,))
    else:
        raise PolicyError("malformed condition", 1, 1)


def _compile_check(ast: PolicyAst, macro_pos: dict) -> None:
    for name, cond in ast.macros.items():
        line, col = macro_pos.get(name, (1, 1))
        _walk_condition(cond, ast, (name,))
    for rule in ast.rules:
        _walk_condition(rule.cond, ast, ())
        if isinstance(rule, MatchRule):
            for attr in rule.show:
                _check_attr(attr, ast)


# -- pretty printer ------------------------------------------------------------

_QUOTE_TRIGGERS = set(" \t()[],\"#\\=<>!")


def _format_value(text: str) -> str:
    if not text or any(c in _QUOTE_TRIGGERS for c in text) or ":=" in text or text in KEYWORDS:
        return f'"{text}"'
    return text


def _format_attr(attr: AttrRef) -> str:
    return f"{attr.name}({attr.k})" if attr.k is not None else attr.name


def _format_operand(node) -> str:
    if isinstance(node, InlineList):
        return "(" + ", ".join(_format_value(v) for v in node.values) + ")"
    if isinstance(node, AttrRef):
        return _format_attr(node)
    return _format_value(node.text)


def _format_condition(cond, parent: str = "or") -> str:
    if isinstance(cond, Or):
        return " or ".join(_format_condition(c, "or") for c in cond.children)
    if isinstance(cond, And):
        return " and ".join(_format_condition(c, "and") for c in cond.children)
    if isinstance(cond, Not):
        return "not " + _format_condition(cond.child, "not")
    if isinstance(cond, Exists):
        return f"{_format_attr(cond.attr)} exists"
    if isinstance(cond, Binary):
        return f"{_format_attr(cond.lhs)} {cond.op} {_format_operand(cond.rhs)}"
    if isinstance(cond, MacroRef):
        return _format_value(cond.name)
    raise ValueError("malformed condition")


def pretty_print(ast: PolicyAst) -> str:
    """Render a policy so that parse(pretty_print(ast)) == ast."""
    lines: list[str] = []
    for name, values in ast.lists.items():
        body = ", ".join(_format_value(v) for v in values)
        lines.append(f"{_format_value(name)} := ({body})")
    for name, cond in ast.macros.items():
        lines.append(f"{_format_value(name)} := {_format_condition(cond)}")
    for rule in ast.rules:
        if isinstance(rule, MatchRule):
            text = f"match {_format_condition(rule.cond)}"
            if rule.show:
                text += " show " + ", ".join(_format_attr(a) for a in rule.show)
        else:
            labels = ", ".join(_format_value(v) for v in rule.labels)
            text = f"tag {_format_condition(rule.cond)} with [{labels}]"
        lines.append(text)
    return "\n".join(lines) + ("\n" if lines else "")
