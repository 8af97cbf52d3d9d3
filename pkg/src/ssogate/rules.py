"""Access-rule expression language: parser, evaluator and header templating.

The grammar is a small closed expression language (no arbitrary code):

    rule      = special | expr
    special   = "accept" | "deny" | "unprotect" | "skip"      ; case-insensitive
    expr      = and_expr { "or" and_expr }
    and_expr  = unary { "and" unary }
    unary     = "not" unary | comparison
    comparison= operand [ ("==" | "!=" | "=~" | "!~" | "<" | "<=" | ">" | ">=") operand
                        | "in" list ]
    operand   = INT | STRING | "true" | "false" | VAR | call | list | "(" expr ")"
    call      = IDENT "(" [ expr { "," expr } ] ")"           ; ipInRange, inGroup
    list      = "[" [ literal { "," literal } ] "]"
    VAR       = "$" IDENT     ; $uri $ip $vhost $authLevel are request variables,
                              ; anything else reads a session attribute

Evaluation is side-effect free and total: runtime errors become deny.
Regex matching uses Python's ``re`` dialect, unanchored (``re.search``).
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass
from enum import Enum
from typing import Union

from .sessions import Session

SPECIALS = ("accept", "deny", "unprotect", "skip")

_CMP_OPS = ("==", "!=", "=~", "!~", "<=", ">=", "<", ">")

REQUEST_VARS = ("uri", "ip", "vhost", "authLevel")

FUNCTIONS = ("ipInRange", "inGroup")


class Decision(Enum):
    ALLOW = "allow"
    DENY = "deny"
    UNPROTECT = "unprotect"
    SKIP = "skip"


class RuleParseError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class EvalError(Exception):
    pass


# --- AST ------------------------------------------------------------------


@dataclass(frozen=True)
class Special:
    kind: str  # one of SPECIALS


@dataclass(frozen=True)
class Lit:
    value: Union[str, int, bool]


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    parts: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Expr", ...]


@dataclass(frozen=True)
class Cmp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class InList:
    item: "Expr"
    items: tuple[Lit, ...]


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]


Expr = Union[Lit, Var, Not, And, Or, Cmp, InList, Call]
Rule = Union[Special, Expr]


# --- Tokenizer --------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>"(?:\\.|[^"\\])*")
  | (?P<int>-?\d+)
  | (?P<var>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|=~|!~|<=|>=|<|>)
  | (?P<punct>[()\[\],])
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise RuleParseError(f"unexpected character {text[pos]!r}", pos)
        kind = match.lastgroup or ""
        if kind != "ws":
            tokens.append(_Token(kind, match.group(), pos))
        pos = match.end()
    return tokens


def _unquote(raw: str) -> str:
    out = []
    i = 1
    while i < len(raw) - 1:
        ch = raw[i]
        if ch == "\\" and i + 1 < len(raw) - 1:
            nxt = raw[i + 1]
            out.append({"n": "\n", "t": "\t", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t") + '"'


# --- Parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token], source: str):
        self.tokens = tokens
        self.source = source
        self.index = 0

    def peek(self) -> _Token | None:
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def next(self) -> _Token:
        token = self.peek()
        if token is None:
            raise RuleParseError("unexpected end of rule", len(self.source))
        self.index += 1
        return token

    def expect(self, kind: str, text: str | None = None) -> _Token:
        token = self.next()
        if token.kind != kind or (text is not None and token.text != text):
            want = text or kind
            raise RuleParseError(f"expected {want!r}, got {token.text!r}", token.pos)
        return token

    def at_keyword(self, word: str) -> bool:
        token = self.peek()
        return token is not None and token.kind == "ident" and token.text == word

    def parse_expr(self) -> Expr:
        parts = [self.parse_and()]
        while self.at_keyword("or"):
            self.next()
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and(self) -> Expr:
        parts = [self.parse_unary()]
        while self.at_keyword("and"):
            self.next()
            parts.append(self.parse_unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_unary(self) -> Expr:
        if self.at_keyword("not"):
            self.next()
            return Not(self.parse_unary())
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_operand()
        token = self.peek()
        if token is not None and token.kind == "op":
            self.next()
            right = self.parse_operand()
            if token.text in ("=~", "!~"):
                self._check_literal_regex(right, token.pos)
            return Cmp(token.text, left, right)
        if token is not None and token.kind == "ident" and token.text == "in":
            self.next()
            items = self.parse_list(self.expect("punct", "[").pos)
            return InList(left, items)
        return left

    def parse_list(self, open_pos: int) -> tuple[Lit, ...]:
        items: list[Lit] = []
        token = self.peek()
        if token is not None and token.text == "]":
            self.next()
            return ()
        while True:
            operand = self.parse_operand()
            if not isinstance(operand, Lit):
                raise RuleParseError("lists may only contain literals", open_pos)
            items.append(operand)
            token = self.next()
            if token.text == "]":
                return tuple(items)
            if token.text != ",":
                raise RuleParseError(f"expected ',' or ']', got {token.text!r}", token.pos)

    def parse_operand(self) -> Expr:
        token = self.next()
        if token.kind == "string":
            return Lit(_unquote(token.text))
        if token.kind == "int":
            return Lit(int(token.text))
        if token.kind == "var":
            return Var(token.text[1:])
        if token.kind == "punct" and token.text == "(":
            inner = self.parse_expr()
            self.expect("punct", ")")
            return inner
        if token.kind == "punct" and token.text == "[":
            return InListPlaceholder(self.parse_list(token.pos))
        if token.kind == "ident":
            if token.text == "true":
                return Lit(True)
            if token.text == "false":
                return Lit(False)
            nxt = self.peek()
            if nxt is not None and nxt.text == "(":
                self.next()
                args: list[Expr] = []
                if not (self.peek() is not None and self.peek().text == ")"):
                    while True:
                        args.append(self.parse_expr())
                        tok = self.next()
                        if tok.text == ")":
                            break
                        if tok.text != ",":
                            raise RuleParseError(f"expected ',' or ')', got {tok.text!r}", tok.pos)
                else:
                    self.next()
                call = Call(token.text, tuple(args))
                self._check_call(call, token.pos)
                return call
            raise RuleParseError(f"unknown word {token.text!r}", token.pos)
        raise RuleParseError(f"unexpected token {token.text!r}", token.pos)

    def _check_call(self, call: Call, pos: int) -> None:
        if call.name not in FUNCTIONS:
            raise RuleParseError(f"unknown function {call.name!r}", pos)
        if len(call.args) != 1:
            raise RuleParseError(f"{call.name} takes exactly one argument", pos)
        arg = call.args[0]
        if call.name == "ipInRange" and isinstance(arg, Lit):
            if not isinstance(arg.value, str):
                raise RuleParseError("ipInRange expects a CIDR string", pos)
            try:
                ipaddress.ip_network(arg.value, strict=False)
            except ValueError:
                raise RuleParseError(f"invalid CIDR {arg.value!r}", pos) from None

    def _check_literal_regex(self, operand: Expr, pos: int) -> None:
        if isinstance(operand, Lit) and isinstance(operand.value, str):
            try:
                re.compile(operand.value)
            except re.error as exc:
                raise RuleParseError(f"invalid regex: {exc}", pos) from None


@dataclass(frozen=True)
class InListPlaceholder:
    """A bare list used as an operand (only legal on the right of ``in``)."""

    items: tuple[Lit, ...]


def parse_rule(text: str) -> Rule:
    if not text or not text.strip():
        raise RuleParseError("empty rule", 0)
    stripped = text.strip()
    if stripped.lower() in SPECIALS:
        return Special(stripped.lower())
    tokens = _tokenize(text)
    parser = _Parser(tokens, text)
    expr = parser.parse_expr()
    trailing = parser.peek()
    if trailing is not None:
        raise RuleParseError(f"unexpected trailing input {trailing.text!r}", trailing.pos)
    if isinstance(expr, InListPlaceholder):
        raise RuleParseError("a bare list is not a rule", 0)
    return expr


def unparse(rule: Rule) -> str:
    """Deterministic printer; ``parse_rule(unparse(r)) == r``."""
    if isinstance(rule, Special):
        return rule.kind
    return _unparse_expr(rule)


def _unparse_expr(expr: Expr) -> str:
    if isinstance(expr, Lit):
        if isinstance(expr.value, bool):
            return "true" if expr.value else "false"
        if isinstance(expr.value, int):
            return str(expr.value)
        return _quote(expr.value)
    if isinstance(expr, Var):
        return f"${expr.name}"
    if isinstance(expr, Not):
        return f"not {_wrap(expr.operand)}"
    if isinstance(expr, And):
        return " and ".join(_wrap(p) for p in expr.parts)
    if isinstance(expr, Or):
        return " or ".join(_wrap(p) for p in expr.parts)
    if isinstance(expr, Cmp):
        return f"{_wrap(expr.left)} {expr.op} {_wrap(expr.right)}"
    if isinstance(expr, InList):
        items = ", ".join(_unparse_expr(i) for i in expr.items)
        return f"{_wrap(expr.item)} in [{items}]"
    if isinstance(expr, Call):
        args = ", ".join(_unparse_expr(a) for a in expr.args)
        return f"{expr.name}({args})"
    raise TypeError(f"cannot unparse {expr!r}")


def _wrap(expr: Expr) -> str:
    if isinstance(expr, (Lit, Var, Call)):
        return _unparse_expr(expr)
    return f"({_unparse_expr(expr)})"


# --- Evaluation -------------------------------------------------------------


@dataclass
class RequestCtx:
    uri: str = "/"
    ip: str = ""
    vhost: str = ""


def _lookup_var(name: str, session: Session | None, ctx: RequestCtx):
    if name == "uri":
        return ctx.uri
    if name == "ip":
        return ctx.ip
    if name == "vhost":
        return ctx.vhost
    if name == "authLevel":
        return session.auth_level if session is not None else 0
    if session is None:
        return ""
    return session.attributes.get(name, "")


def _eval(expr: Expr, session: Session | None, ctx: RequestCtx):
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Var):
        return _lookup_var(expr.name, session, ctx)
    if isinstance(expr, Not):
        value = _eval(expr.operand, session, ctx)
        if not isinstance(value, bool):
            raise EvalError("'not' needs a boolean operand")
        return not value
    if isinstance(expr, And):
        for part in expr.parts:
            value = _eval(part, session, ctx)
            if not isinstance(value, bool):
                raise EvalError("'and' needs boolean operands")
            if not value:
                return False
        return True
    if isinstance(expr, Or):
        for part in expr.parts:
            value = _eval(part, session, ctx)
            if not isinstance(value, bool):
                raise EvalError("'or' needs boolean operands")
            if value:
                return True
        return False
    if isinstance(expr, Cmp):
        return _eval_cmp(expr, session, ctx)
    if isinstance(expr, InList):
        item = _eval(expr.item, session, ctx)
        return any(item == lit.value and type(item) is type(lit.value) for lit in expr.items)
    if isinstance(expr, Call):
        return _eval_call(expr, session, ctx)
    if isinstance(expr, InListPlaceholder):
        raise EvalError("a bare list has no value")
    raise EvalError(f"cannot evaluate {expr!r}")


def _eval_cmp(expr: Cmp, session: Session | None, ctx: RequestCtx):
    left = _eval(expr.left, session, ctx)
    right = _eval(expr.right, session, ctx)
    op = expr.op
    if op in ("=~", "!~"):
        if not isinstance(left, str) or not isinstance(right, str):
            raise EvalError("regex match needs string operands")
        try:
            matched = re.search(right, left) is not None
        except re.error as exc:
            raise EvalError(f"invalid regex: {exc}") from None
        return matched if op == "=~" else not matched
    if isinstance(left, bool) != isinstance(right, bool) or (
        not isinstance(left, bool) and type(left) is not type(right)
    ):
        raise EvalError(f"type mismatch: {type(left).__name__} {op} {type(right).__name__}")
    if op == "==":
        return left == right
    if op == "!=":
        return left != right
    if isinstance(left, bool):
        raise EvalError(f"booleans do not support {op}")
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise EvalError(f"unknown operator {op}")


def _eval_call(expr: Call, session: Session | None, ctx: RequestCtx):
    arg = _eval(expr.args[0], session, ctx)
    if expr.name == "ipInRange":
        if not isinstance(arg, str):
            raise EvalError("ipInRange expects a CIDR string")
        try:
            network = ipaddress.ip_network(arg, strict=False)
            address = ipaddress.ip_address(ctx.ip)
        except ValueError as exc:
            raise EvalError(str(exc)) from None
        return address in network
    if expr.name == "inGroup":
        if not isinstance(arg, str):
            raise EvalError("inGroup expects a group name")
        groups = _lookup_var("groups", session, ctx)
        if not isinstance(groups, str):
            raise EvalError("groups attribute is not a string")
        return arg in [g.strip() for g in groups.split(",") if g.strip()]
    raise EvalError(f"unknown function {expr.name}")


def evaluate_explain(
    rule: Rule, session: Session | None, ctx: RequestCtx
) -> tuple[Decision, str | None]:
    """Evaluate a rule; runtime errors collapse to deny with the error text."""
    if isinstance(rule, Special):
        return {
            "accept": Decision.ALLOW,
            "deny": Decision.DENY,
            "unprotect": Decision.UNPROTECT,
            "skip": Decision.SKIP,
        }[rule.kind], None
    try:
        value = _eval(rule, session, ctx)
    except EvalError as exc:
        return Decision.DENY, str(exc)
    if not isinstance(value, bool):
        return Decision.DENY, f"rule evaluated to {type(value).__name__}, expected boolean"
    return (Decision.ALLOW if value else Decision.DENY), None


def evaluate(rule: Rule, session: Session | None, ctx: RequestCtx) -> Decision:
    return evaluate_explain(rule, session, ctx)[0]


def select_rule(vhost_config, request_uri: str) -> tuple[str, Rule]:
    """First entry whose regex matches path+query wins, else the default rule."""
    for pattern, rule in vhost_config.rules:
        if re.search(pattern, request_uri):
            return pattern, rule
    return "default", vhost_config.default_rule


_TEMPLATE_TOKEN = re.compile(r"\$([A-Za-z_][A-Za-z0-9_]*)")


def render_headers(templates: dict[str, str], session: Session | None) -> dict[str, str]:
    """Expand ``$attr`` tokens from session attributes; CR/LF are stripped."""

    def expand(match: re.Match) -> str:
        name = match.group(1)
        if name == "authLevel":
            return str(session.auth_level) if session is not None else ""
        if session is None:
            return ""
        return session.attributes.get(name, "")

    out: dict[str, str] = {}
    for name, template in templates.items():
        value = _TEMPLATE_TOKEN.sub(expand, template)
        out[name] = value.replace("\r", "").replace("\n", "")
    return out


_HEADER_NAME_RE = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+$")


def is_valid_header_name(name: str) -> bool:
    """RFC 9110 field-name token."""
    return bool(_HEADER_NAME_RE.match(name))
