"""Small infix expression language used to define right-hand sides and kernels.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

``-x^2`` therefore parses as ``-(x^2)``.  There is no implicit multiplication.

Expressions can be evaluated by walking the tree (:func:`evaluate`) or turned
into a plain Python function (:func:`to_callable`) for the solver's inner loop.
Both paths perform the same floating point operations in the same order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

__all__ = [
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Expr",
    "FUNCTIONS",
    "ExprError",
    "ExprSyntaxError",
    "UnknownVariableError",
    "UnknownFunctionError",
    "ArityError",
    "MissingBindingError",
    "DomainError",
    "parse",
    "evaluate",
    "to_source",
    "variables",
    "to_callable",
]

# exponents up to this magnitude are expanded into repeated multiplication
SMALL_INT_POWER = 16


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Neg, BinOp, Call]


class ExprError(ValueError):
    """Base class for every error raised by this module."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at offset {position}")


class UnknownVariableError(ExprError):
    def __init__(self, name: str, position: int, allowed: Iterable[str]):
        self.name = name
        self.position = position
        allowed = ", ".join(sorted(allowed)) or "<none>"
        super().__init__(f"unknown variable {name!r} at offset {position} (allowed: {allowed})")


class UnknownFunctionError(ExprError):
    def __init__(self, name: str, position: int):
        self.name = name
        self.position = position
        super().__init__(f"unknown function {name!r} at offset {position}")


class ArityError(ExprError):
    def __init__(self, name: str, expected: int, got: int, position: int):
        self.name = name
        self.expected = expected
        self.got = got
        self.position = position
        super().__init__(
            f"function {name!r} takes {expected} argument(s), got {got} at offset {position}"
        )


class MissingBindingError(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"no value bound for variable {name!r}")


class DomainError(ExprError, ArithmeticError):
    """An operation was applied outside its real domain.

    ``subexpr`` is the offending subexpression, ``args`` the operand values.
    """

    def __init__(self, message: str, subexpr: Expr, args: tuple[float, ...] = ()):
        self.subexpr = subexpr
        self.args_values = args
        super().__init__(f"{message} in '{to_source(subexpr)}'")


def _checked_ln(a: float) -> float:
    if a <= 0.0:
        raise ValueError("ln of non-positive argument")
    return math.log(a)


def _checked_sqrt(a: float) -> float:
    if a < 0.0:
        raise ValueError("sqrt of negative argument")
    return math.sqrt(a)


# name -> (implementation, arity)
FUNCTIONS: dict[str, tuple[Callable[[float], float], int]] = {
    "sin": (math.sin, 1),
    "cos": (math.cos, 1),
    "tan": (math.tan, 1),
    "sinh": (math.sinh, 1),
    "cosh": (math.cosh, 1),
    "tanh": (math.tanh, 1),
    "exp": (math.exp, 1),
    "ln": (_checked_ln, 1),
    "sqrt": (_checked_sqrt, 1),
    "abs": (abs, 1),
}


# --------------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos, source)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


# --------------------------------------------------------------------------- parser

class _Parser:
    def __init__(self, source: str, allowed_vars: frozenset[str]):
        self.source = source
        self.allowed = allowed_vars
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def _error(self, message: str) -> ExprSyntaxError:
        kind, text, pos = self.tok
        found = "end of input" if kind == "end" else repr(text)
        return ExprSyntaxError(f"{message}, found {found}", pos, self.source)

    def _accept(self, text: str) -> bool:
        if self.tok[0] == "op" and self.tok[1] == text:
            self.i += 1
            return True
        return False

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok[0] != "end":
            raise self._error("expected operator or end of input")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self.tok[1]
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op = self.tok[1]
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self._accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.tok
        if kind == "num":
            self.i += 1
            return Num(float(text))
        if kind == "name":
            self.i += 1
            if self._accept("("):
                args = [self.expr()]
                while self._accept(","):
                    args.append(self.expr())
                if not self._accept(")"):
                    raise self._error("expected ')' or ','")
                if text not in FUNCTIONS:
                    raise UnknownFunctionError(text, pos)
                arity = FUNCTIONS[text][1]
                if len(args) != arity:
                    raise ArityError(text, arity, len(args), pos)
                return Call(text, tuple(args))
            if text in FUNCTIONS:
                raise ArityError(text, FUNCTIONS[text][1], 0, pos)
            if text not in self.allowed:
                raise UnknownVariableError(text, pos, self.allowed)
            return Var(text)
        if self._accept("("):
            node = self.expr()
            if not self._accept(")"):
                raise self._error("expected ')'")
            return node
        raise self._error("expected number, name or '('")


def parse(source: str, allowed_vars: Iterable[str]) -> Expr:
    """Parse ``source`` into an expression tree.

    Every variable must belong to ``allowed_vars``; function names must be in
    :data:`FUNCTIONS` and called with the right number of arguments.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0, source)
    return _Parser(source, frozenset(allowed_vars)).parse()


# --------------------------------------------------------------------------- evaluation

def _small_int_exponent(node: Expr) -> int | None:
    """Return the exponent if ``node`` is a literal small integer (possibly negated)."""
    sign = 1
    while isinstance(node, Neg):
        sign = -sign
        node = node.operand
    if isinstance(node, Num) and node.value.is_integer() and abs(node.value) <= SMALL_INT_POWER:
        return sign * int(node.value)
    return None


def _int_power(a: float, n: int) -> float:
    if n == 0:
        return 1.0
    r = a
    for _ in range(abs(n) - 1):
        r = r * a
    return r if n > 0 else 1.0 / r


def _real_power(a: float, b: float) -> float:
    if a > 0.0:
        return math.exp(b * math.log(a))
    if a == 0.0 and b > 0.0:
        return 0.0
    raise ValueError("power with non-positive base and non-integer exponent")


def evaluate(expr: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate ``expr`` with the variable values in ``bindings``.

    Raises :class:`MissingBindingError` for an unbound variable and
    :class:`DomainError` (carrying the offending subexpression) for division by
    zero, ``ln``/``sqrt`` outside their domain, or overflow.
    """
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return float(bindings[expr.name])
        except KeyError:
            raise MissingBindingError(expr.name) from None
    if isinstance(expr, Neg):
        return -evaluate(expr.operand, bindings)
    if isinstance(expr, Call):
        arg = evaluate(expr.args[0], bindings)
        try:
            value = FUNCTIONS[expr.func][0](arg)
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"{expr.func}({arg!r}): {exc}", expr, (arg,)) from None
        return float(value)

    op = expr.op
    if op == "^":
        a = evaluate(expr.left, bindings)
        n = _small_int_exponent(expr.right)
        try:
            if n is not None:
                return _int_power(a, n)
            b = evaluate(expr.right, bindings)
            return _real_power(a, b)
        except ZeroDivisionError:
            raise DomainError("zero raised to a negative power", expr, (a,)) from None
        except (ValueError, OverflowError) as exc:
            raise DomainError(str(exc), expr, (a,)) from None

    a = evaluate(expr.left, bindings)
    b = evaluate(expr.right, bindings)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0.0:
        raise DomainError("division by zero", expr, (a, b))
    return a / b


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_num(value: float) -> str:
    text = repr(value)
    if text.endswith(".0"):
        text = text[:-2]
    return text


def to_source(expr: Expr) -> str:
    """Print ``expr`` back to the infix language, inserting only needed parentheses."""

    def go(node: Expr, ctx: int, right_side: bool = False) -> str:
        if isinstance(node, Num):
            # a literal starting with '-' cannot occur: the parser produces Neg(Num)
            return _fmt_num(node.value)
        if isinstance(node, Var):
            return node.name
        if isinstance(node, Call):
            return f"{node.func}(" + ", ".join(go(a, 0) for a in node.args) + ")"
        if isinstance(node, Neg):
            text = "-" + go(node.operand, _PREC["neg"])
            prec = _PREC["neg"]
        else:
            prec = _PREC[node.op]
            if node.op == "^":
                # base binds tighter than ^; exponent may be any unary
                text = go(node.left, prec + 1) + "^" + go(node.right, _PREC["neg"])
            else:
                text = go(node.left, prec) + f" {node.op} " + go(node.right, prec, True)
        needs = prec < ctx or (right_side and prec == ctx)
        return f"({text})" if needs else text

    return go(expr, 0)


def variables(expr: Expr) -> set[str]:
    """Names of every variable referenced by ``expr``."""
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Neg):
        return variables(expr.operand)
    if isinstance(expr, Call):
        return set().union(*(variables(a) for a in expr.args))
    return variables(expr.left) | variables(expr.right)


# --------------------------------------------------------------------------- compilation

def _python_source(expr: Expr, access: Mapping[str, str]) -> str:
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return access.get(expr.name, expr.name)
    if isinstance(expr, Neg):
        return f"(-{_python_source(expr.operand, access)})"
    if isinstance(expr, Call):
        return f"_fn_{expr.func}({_python_source(expr.args[0], access)})"
    left = _python_source(expr.left, access)
    if expr.op == "^":
        n = _small_int_exponent(expr.right)
        if n is None:
            return f"_real_power({left}, {_python_source(expr.right, access)})"
        simple = isinstance(expr.left, (Var, Num))
        if n == 0:
            return "1.0" if simple else f"(lambda _b: 1.0)({left})"
        base = left if simple else "_b"
        chain = "*".join([base] * abs(n))
        body = f"({chain})" if n > 0 else f"(1.0/({chain}))"
        # compound bases are bound once so they are evaluated a single time
        return body if simple else f"(lambda _b: {body})({left})"
    right = _python_source(expr.right, access)
    return f"({left} {expr.op} {right})"


def to_callable(
    expr: Expr,
    signature: Sequence[str],
    access: Mapping[str, str] | None = None,
) -> Callable[..., float]:
    """Compile ``expr`` into a Python function of the positional ``signature``.

    ``access`` maps expression variable names to Python expressions over the
    signature arguments, e.g. ``{"y1": "y[0]"}``; unmapped names are taken to
    be signature arguments themselves.  A failing evaluation is replayed
    through :func:`evaluate` so the raised :class:`DomainError` names the
    offending subexpression.
    """
    access = dict(access or {})
    for name in variables(expr):
        if name not in access and name not in signature:
            raise MissingBindingError(name)
    body = _python_source(expr, access)
    names = sorted(variables(expr))
    replay = "{" + ", ".join(f"{n!r}: {access.get(n, n)}" for n in names) + "}"
    args = ", ".join(signature)
    src = (
        f"def _compiled({args}):\n"
        f"    try:\n"
        f"        return {body}\n"
        f"    except (ArithmeticError, ValueError):\n"
        f"        return _replay({replay})\n"
    )
    namespace: dict[str, object] = {f"_fn_{k}": v[0] for k, v in FUNCTIONS.items()}
    namespace["_real_power"] = _real_power

    def _replay(bindings: Mapping[str, float]) -> float:
        value = evaluate(expr, bindings)
        # the fast path failed where the tree walk did not (e.g. float overflow)
        raise DomainError(f"evaluation failed (tree walk gave {value!r})", expr)

    namespace["_replay"] = _replay
    exec(compile(src, "<expr>", "exec"), namespace)
    fn = namespace["_compiled"]
    fn.__doc__ = to_source(expr)
    fn.expr = expr  # type: ignore[attr-defined]
    return fn  # type: ignore[return-value]
