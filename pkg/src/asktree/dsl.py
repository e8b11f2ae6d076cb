"""Boolean predicate expressions over sample features.

Split conditions of CODE questions are written in a small, total predicate
language instead of generated general-purpose code: an expression cannot
loop, recurse, or touch anything outside the sample it is applied to, which
keeps code splits deterministic, auditable, and safe to evaluate.

Grammar (EBNF)::

    expr        = or_expr ;
    or_expr     = and_expr , { "or" , and_expr } ;
    and_expr    = not_expr , { "and" , not_expr } ;
    not_expr    = "not" , not_expr | atom ;
    atom        = "(" , expr , ")" | test ;
    test        = feature , comparator , literal
                | feature , "contains" , string
                | feature , "starts_with" , string
                | feature , "in" , "{" , string , { "," , string } , "}"
                | feature , "is_missing" ;
    comparator  = "==" | "!=" | "<" | "<=" | ">" | ">=" ;
    literal     = number | string ;
    feature     = identifier ;

``not`` binds tighter than ``and``, which binds tighter than ``or``; both
binary operators are left-associative.  Missing feature values make every
test other than ``is_missing`` evaluate to false.  ``contains`` and
``starts_with`` compare case-insensitively; ``==``, ``!=`` and ``in`` are
case-sensitive.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Union

from .errors import DslSyntaxError, DslTypeError

__all__ = [
    "Expr",
    "Cmp",
    "Contains",
    "StartsWith",
    "IsMissing",
    "InSet",
    "Not",
    "And",
    "Or",
    "parse",
    "validate",
    "evaluate",
    "format_expr",
    "feature_names",
]


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Cmp:
    op: str  # one of == != < <= > >=
    feature: str
    value: Union[float, str]


@dataclass(frozen=True)
class Contains:
    feature: str
    needle: str


@dataclass(frozen=True)
class StartsWith:
    feature: str
    prefix: str


@dataclass(frozen=True)
class IsMissing:
    feature: str


@dataclass(frozen=True)
class InSet:
    feature: str
    values: tuple[str, ...]


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


Expr = Union[Cmp, Contains, StartsWith, IsMissing, InSet, Not, And, Or]

_NUMERIC_OPS = {"<", "<=", ">", ">="}
_EQUALITY_OPS = {"==", "!="}


# --------------------------------------------------------------------------
# Tokenizer
# --------------------------------------------------------------------------


class _Token(NamedTuple):
    kind: str
    value: str
    pos: int


_KEYWORDS = {"and", "or", "not", "contains", "starts_with", "is_missing", "in"}

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<string>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
    | (?P<op><=|>=|==|!=|<|>)
    | (?P<lparen>\()
    | (?P<rparen>\))
    | (?P<lbrace>\{)
    | (?P<rbrace>\})
    | (?P<comma>,)
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup or ""
        if kind != "ws":
            value = m.group()
            if kind == "ident" and value in _KEYWORDS:
                kind = value
            tokens.append(_Token(kind, value, pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


def _unquote(raw: str) -> str:
    body = raw[1:-1]
    out: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            out.append(body[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


# --------------------------------------------------------------------------
# Parser (recursive descent)
# --------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        if self.cur.kind != kind:
            raise DslSyntaxError(f"expected {what}", self.cur.pos)
        return self.advance()

    def parse_expr(self) -> Expr:
        node = self.parse_and()
        while self.cur.kind == "or":
            self.advance()
            node = Or(node, self.parse_and())
        return node

    def parse_and(self) -> Expr:
        node = self.parse_not()
        while self.cur.kind == "and":
            self.advance()
            node = And(node, self.parse_not())
        return node

    def parse_not(self) -> Expr:
        if self.cur.kind == "not":
            self.advance()
            return Not(self.parse_not())
        return self.parse_atom()

    def parse_atom(self) -> Expr:
        if self.cur.kind == "lparen":
            self.advance()
            node = self.parse_expr()
            self.expect("rparen", "')'")
            return node
        if self.cur.kind != "ident":
            raise DslSyntaxError("expected feature name or '('", self.cur.pos)
        feature = self.advance().value
        tok = self.cur
        if tok.kind == "op":
            self.advance()
            return Cmp(tok.value, feature, self.parse_literal())
        if tok.kind == "contains":
            self.advance()
            return Contains(feature, self.parse_string())
        if tok.kind == "starts_with":
            self.advance()
            return StartsWith(feature, self.parse_string())
        if tok.kind == "is_missing":
            self.advance()
            return IsMissing(feature)
        if tok.kind == "in":
            self.advance()
            self.expect("lbrace", "'{'")
            values = [self.parse_string()]
            while self.cur.kind == "comma":
                self.advance()
                values.append(self.parse_string())
            self.expect("rbrace", "'}'")
            return InSet(feature, tuple(values))
        raise DslSyntaxError("expected a comparison or text operator", tok.pos)

    def parse_literal(self) -> Union[float, str]:
        tok = self.cur
        if tok.kind == "number":
            self.advance()
            return float(tok.value)
        if tok.kind == "string":
            self.advance()
            return _unquote(tok.value)
        raise DslSyntaxError("expected a number or quoted string", tok.pos)

    def parse_string(self) -> str:
        tok = self.expect("string", "a quoted string")
        return _unquote(tok.value)


def parse(text: str, schema: Iterable | None = None) -> Expr:
    """Parse DSL text into an AST; optionally type-check against a schema.

    Raises :class:`DslSyntaxError` with the byte offset of the offending
    token, or :class:`DslTypeError` naming the feature, when ``schema`` is
    given and the expression is not type-consistent with it.
    """
    parser = _Parser(_tokenize(text))
    expr = parser.parse_expr()
    if parser.cur.kind != "eof":
        raise DslSyntaxError("unexpected trailing input", parser.cur.pos)
    if schema is not None:
        validate(expr, schema)
    return expr


# --------------------------------------------------------------------------
# Type checking
# --------------------------------------------------------------------------


def _schema_kinds(schema: Iterable) -> dict[str, str]:
    kinds: dict[str, str] = {}
    for spec in schema:
        kinds[spec.name] = spec.kind
    return kinds


def validate(expr: Expr, schema: Iterable) -> None:
    """Check every feature reference exists and operators match feature kinds."""
    kinds = _schema_kinds(schema)

    def check(node: Expr) -> None:
        if isinstance(node, (And, Or)):
            check(node.left)
            check(node.right)
            return
        if isinstance(node, Not):
            check(node.operand)
            return
        feature = node.feature
        if feature not in kinds:
            raise DslTypeError(f"unknown feature {feature!r}", feature)
        kind = kinds[feature]
        if isinstance(node, Cmp):
            if node.op in _NUMERIC_OPS:
                if kind != "numeric":
                    raise DslTypeError(
                        f"operator {node.op!r} needs a numeric feature, "
                        f"{feature!r} is {kind}",
                        feature,
                    )
                if not isinstance(node.value, float):
                    raise DslTypeError(
                        f"operator {node.op!r} on {feature!r} needs a numeric literal",
                        feature,
                    )
            elif isinstance(node.value, float) and kind != "numeric":
                raise DslTypeError(
                    f"numeric literal compared against {kind} feature {feature!r}",
                    feature,
                )
            elif isinstance(node.value, str) and kind == "numeric":
                raise DslTypeError(
                    f"string literal compared against numeric feature {feature!r}",
                    feature,
                )
        elif isinstance(node, (Contains, StartsWith, InSet)):
            if kind == "numeric":
                raise DslTypeError(
                    f"text operator applied to numeric feature {feature!r}",
                    feature,
                )
        # IsMissing is valid for every kind.

    check(expr)


def feature_names(expr: Expr) -> set[str]:
    """All feature names referenced by the expression."""
    if isinstance(expr, (And, Or)):
        return feature_names(expr.left) | feature_names(expr.right)
    if isinstance(expr, Not):
        return feature_names(expr.operand)
    return {expr.feature}


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def evaluate(expr: Expr, sample) -> bool:
    """Total evaluation of ``expr`` against a sample (or a features mapping).

    Missing values: every comparison and text operator yields false;
    ``is_missing`` yields true.
    """
    features: Mapping = getattr(sample, "features", sample)

    def ev(node: Expr) -> bool:
        if isinstance(node, And):
            return ev(node.left) and ev(node.right)
        if isinstance(node, Or):
            return ev(node.left) or ev(node.right)
        if isinstance(node, Not):
            return not ev(node.operand)
        value = features.get(node.feature)
        if isinstance(node, IsMissing):
            return value is None
        if value is None:
            return False
        if isinstance(node, Cmp):
            if isinstance(node.value, float):
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    return False
                if node.op == "==":
                    return float(value) == node.value
                if node.op == "!=":
                    return float(value) != node.value
                if node.op == "<":
                    return float(value) < node.value
                if node.op == "<=":
                    return float(value) <= node.value
                if node.op == ">":
                    return float(value) > node.value
                return float(value) >= node.value
            if not isinstance(value, str):
                return False
            if node.op == "==":
                return value == node.value
            if node.op == "!=":
                return value != node.value
            return False  # ordering operators never reach strings post-validation
        if isinstance(node, Contains):
            return isinstance(value, str) and node.needle.casefold() in value.casefold()
        if isinstance(node, StartsWith):
            return isinstance(value, str) and value.casefold().startswith(
                node.prefix.casefold()
            )
        if isinstance(node, InSet):
            return isinstance(value, str) and value in node.values
        raise TypeError(f"unknown expression node {node!r}")

    return ev(expr)


# --------------------------------------------------------------------------
# Formatting
# --------------------------------------------------------------------------

_PREC = {Or: 1, And: 2, Not: 3}


def _prec(node: Expr) -> int:
    return _PREC.get(type(node), 4)


def _quote(s: str) -> str:
    return "'" + s.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def format_expr(expr: Expr) -> str:
    """Render an AST as DSL text; ``parse(format_expr(e))`` reproduces ``e``."""

    def fmt(node: Expr, parent_prec: int, is_right: bool) -> str:
        p = _prec(node)
        if isinstance(node, (And, Or)):
            word = "and" if isinstance(node, And) else "or"
            text = f"{fmt(node.left, p, False)} {word} {fmt(node.right, p, True)}"
        elif isinstance(node, Not):
            text = f"not {fmt(node.operand, p, False)}"
        elif isinstance(node, Cmp):
            lit = (
                _fmt_number(node.value)
                if isinstance(node.value, float)
                else _quote(node.value)
            )
            text = f"{node.feature} {node.op} {lit}"
        elif isinstance(node, Contains):
            text = f"{node.feature} contains {_quote(node.needle)}"
        elif isinstance(node, StartsWith):
            text = f"{node.feature} starts_with {_quote(node.prefix)}"
        elif isinstance(node, IsMissing):
            text = f"{node.feature} is_missing"
        elif isinstance(node, InSet):
            inner = ", ".join(_quote(v) for v in node.values)
            text = f"{node.feature} in {{{inner}}}"
        else:
            raise TypeError(f"unknown expression node {node!r}")
        if p < parent_prec or (p == parent_prec and is_right and p in (1, 2)):
            return f"({text})"
        return text

    return fmt(expr, 0, False)
