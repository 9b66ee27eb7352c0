"""Symbolic expression trees for nonlinear ODE right-hand sides.

Nodes cover constants, variables, n-ary sums and products, integer powers,
and the elementary transcendentals (sin, cos, exp, ln) plus a first-class
reciprocal node.  The set is closed under partial differentiation, which is
what makes Lie-derivative lifting terminate.

Expressions are immutable and compare structurally, so they can be shared,
hashed, and deduplicated freely.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Union

Number = Union[int, float]
Env = Mapping[str, float]

_FUNCTION_NAMES = ("sin", "cos", "exp", "ln")


class ExprError(ValueError):
    """Base class for expression-layer errors."""


class ParseError(ExprError):
    """Syntax error; carries the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvaluationError(ExprError):
    """Unbound variable or domain violation during numeric evaluation."""


class Expr:
    """Base class for all expression nodes."""

    __slots__ = ()

    def _key(self):
        raise NotImplementedError

    def __eq__(self, other):
        return isinstance(other, Expr) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __str__(self):
        return to_string(self)

    def __repr__(self):
        return f"{type(self).__name__}({to_string(self)!r})"

    @staticmethod
    def _coerce(value) -> "Expr":
        if isinstance(value, Expr):
            return value
        if isinstance(value, (int, float)):
            return Constant(float(value))
        raise TypeError(f"cannot use {type(value).__name__} as an expression")

    def __add__(self, other):
        return Sum((self, Expr._coerce(other)))

    def __radd__(self, other):
        return Sum((Expr._coerce(other), self))

    def __sub__(self, other):
        return Sum((self, -Expr._coerce(other)))

    def __rsub__(self, other):
        return Sum((Expr._coerce(other), -self))

    def __mul__(self, other):
        return Product((self, Expr._coerce(other)))

    def __rmul__(self, other):
        return Product((Expr._coerce(other), self))

    def __truediv__(self, other):
        other = Expr._coerce(other)
        if isinstance(other, Constant):
            return Product((self, Constant(1.0 / other.value)))
        return Product((self, Reciprocal(other)))

    def __rtruediv__(self, other):
        return Expr._coerce(other) * Reciprocal(self)

    def __pow__(self, exponent):
        if not isinstance(exponent, int):
            raise TypeError("exponents must be integers")
        return Power(self, exponent)

    def __neg__(self):
        if isinstance(self, Constant):
            return Constant(-self.value)
        return Product((Constant(-1.0), self))


class Constant(Expr):
    __slots__ = ("value",)

    def __init__(self, value: Number):
        object.__setattr__(self, "value", float(value))

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    def _key(self):
        return ("const", self.value)


class Variable(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    def _key(self):
        return ("var", self.name)


class _Nary(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Expr]):
        terms = tuple(terms)
        if not terms:
            raise ValueError(f"{type(self).__name__} needs at least one operand")
        object.__setattr__(self, "terms", terms)

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    def _key(self):
        return (type(self).__name__, tuple(t._key() for t in self.terms))


class Sum(_Nary):
    __slots__ = ()


class Product(_Nary):
    __slots__ = ()


class Power(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        if not isinstance(exponent, int) or isinstance(exponent, bool):
            raise TypeError("Power exponent must be an integer")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", exponent)

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    def _key(self):
        return ("pow", self.base._key(), self.exponent)


class _Unary(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        object.__setattr__(self, "arg", arg)

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    def _key(self):
        return (type(self).__name__, self.arg._key())


class Sin(_Unary):
    __slots__ = ()


class Cos(_Unary):
    __slots__ = ()


class Exp(_Unary):
    __slots__ = ()


class Ln(_Unary):
    __slots__ = ()


class Reciprocal(_Unary):
    """Multiplicative inverse 1/arg, kept as its own node so lifting rules
    can pattern-match it directly."""

    __slots__ = ()


def var(name: str) -> Variable:
    return Variable(name)


def const(value: Number) -> Constant:
    return Constant(value)


def sin(arg) -> Sin:
    return Sin(Expr._coerce(arg))


def cos(arg) -> Cos:
    return Cos(Expr._coerce(arg))


def exp(arg) -> Exp:
    return Exp(Expr._coerce(arg))


def ln(arg) -> Ln:
    return Ln(Expr._coerce(arg))


def reciprocal(arg) -> Reciprocal:
    return Reciprocal(Expr._coerce(arg))


# ---------------------------------------------------------------------------
# Traversal helpers


def free_variables(e: Expr) -> frozenset:
    """Names of all variables appearing in the expression."""
    out = set()

    def walk(node):
        if isinstance(node, Variable):
            out.add(node.name)
        elif isinstance(node, _Nary):
            for t in node.terms:
                walk(t)
        elif isinstance(node, Power):
            walk(node.base)
        elif isinstance(node, _Unary):
            walk(node.arg)

    walk(e)
    return frozenset(out)


def substitute(e: Expr, bindings: Mapping[str, Union[Expr, Number]]) -> Expr:
    """Replace variables by expressions (or numbers) by name."""
    coerced = {k: Expr._coerce(v) for k, v in bindings.items()}

    def walk(node):
        if isinstance(node, Variable):
            return coerced.get(node.name, node)
        if isinstance(node, Constant):
            return node
        if isinstance(node, Sum):
            return Sum(tuple(walk(t) for t in node.terms))
        if isinstance(node, Product):
            return Product(tuple(walk(t) for t in node.terms))
        if isinstance(node, Power):
            return Power(walk(node.base), node.exponent)
        return type(node)(walk(node.arg))

    return walk(e)


def replace_subexpressions(e: Expr, mapping: Mapping[Expr, Expr]) -> Expr:
    """Structurally replace whole subtrees.

    Children are rewritten first, so chains like ``exp(x) -> z1`` followed by
    ``1/(1+z1) -> z2`` resolve in a single pass.
    """

    def walk(node):
        if isinstance(node, Sum):
            rebuilt = Sum(tuple(walk(t) for t in node.terms))
        elif isinstance(node, Product):
            rebuilt = Product(tuple(walk(t) for t in node.terms))
        elif isinstance(node, Power):
            rebuilt = Power(walk(node.base), node.exponent)
        elif isinstance(node, _Unary):
            rebuilt = type(node)(walk(node.arg))
        else:
            rebuilt = node
        return mapping.get(rebuilt, rebuilt)

    return walk(e)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(e: Expr, env: Env) -> float:
    """Evaluate at a point given bindings for every free variable.

    Raises EvaluationError for unbound variables, ln of a nonpositive value,
    or a zero denominator.
    """
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Variable):
        try:
            return float(env[e.name])
        except KeyError:
            raise EvaluationError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Sum):
        return math.fsum(evaluate(t, env) for t in e.terms)
    if isinstance(e, Product):
        out = 1.0
        for t in e.terms:
            out *= evaluate(t, env)
        return out
    if isinstance(e, Power):
        base = evaluate(e.base, env)
        if base == 0.0 and e.exponent < 0:
            raise EvaluationError("zero raised to a negative power")
        return base**e.exponent
    if isinstance(e, Sin):
        return math.sin(evaluate(e.arg, env))
    if isinstance(e, Cos):
        return math.cos(evaluate(e.arg, env))
    if isinstance(e, Exp):
        return math.exp(evaluate(e.arg, env))
    if isinstance(e, Ln):
        arg = evaluate(e.arg, env)
        if arg <= 0.0:
            raise EvaluationError(f"ln of nonpositive value {arg}")
        return math.log(arg)
    if isinstance(e, Reciprocal):
        arg = evaluate(e.arg, env)
        if arg == 0.0:
            raise EvaluationError("division by zero")
        return 1.0 / arg
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Differentiation


def differentiate(e: Expr, name: str) -> Expr:
    """Partial derivative with respect to the named variable, simplified.

    Variables other than ``name`` are treated as constants, which is how
    model parameters stay inert under state differentiation.
    """
    return simplify(_diff(e, name))


def _diff(e: Expr, name: str) -> Expr:
    if isinstance(e, Constant):
        return Constant(0.0)
    if isinstance(e, Variable):
        return Constant(1.0 if e.name == name else 0.0)
    if isinstance(e, Sum):
        return Sum(tuple(_diff(t, name) for t in e.terms))
    if isinstance(e, Product):
        parts = []
        for i, t in enumerate(e.terms):
            rest = e.terms[:i] + e.terms[i + 1 :]
            parts.append(Product((_diff(t, name),) + rest))
        return Sum(tuple(parts))
    if isinstance(e, Power):
        if e.exponent == 0:
            return Constant(0.0)
        return Product(
            (
                Constant(float(e.exponent)),
                Power(e.base, e.exponent - 1),
                _diff(e.base, name),
            )
        )
    if isinstance(e, Sin):
        return Product((Cos(e.arg), _diff(e.arg, name)))
    if isinstance(e, Cos):
        return Product((Constant(-1.0), Sin(e.arg), _diff(e.arg, name)))
    if isinstance(e, Exp):
        return Product((Exp(e.arg), _diff(e.arg, name)))
    if isinstance(e, Ln):
        return Product((Reciprocal(e.arg), _diff(e.arg, name)))
    if isinstance(e, Reciprocal):
        # d(1/u) = -u' / u^2, kept in reciprocal-power form so that the
        # lifting substitution u_inv -> z turns it into -z^2 * u'.
        return Product(
            (Constant(-1.0), Power(Reciprocal(e.arg), 2), _diff(e.arg, name))
        )
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Simplification and canonical ordering


def _sort_key(e: Expr):
    if isinstance(e, Constant):
        return (0, e.value)
    if isinstance(e, Variable):
        return (1, e.name)
    if isinstance(e, Sin):
        return (2, _sort_key(e.arg))
    if isinstance(e, Cos):
        return (3, _sort_key(e.arg))
    if isinstance(e, Exp):
        return (4, _sort_key(e.arg))
    if isinstance(e, Ln):
        return (5, _sort_key(e.arg))
    if isinstance(e, Reciprocal):
        return (6, _sort_key(e.arg))
    if isinstance(e, Power):
        # Sorts right after its own base, so x^2 follows x and precedes y.
        return _sort_key(e.base) + ("^", e.exponent)
    if isinstance(e, Product):
        return (8, len(e.terms)) + tuple(_sort_key(t) for t in e.terms)
    return (9, len(e.terms)) + tuple(_sort_key(t) for t in e.terms)


def simplify(e: Expr) -> Expr:
    """Canonical form: constants folded, 0/1 identities removed, nested
    sums/products flattened, repeated factors merged into powers, and
    commutative operands put in a deterministic order.

    Semantics are preserved; this is not a general-purpose CAS rewrite.
    """
    if isinstance(e, (Constant, Variable)):
        return e

    if isinstance(e, Sum):
        terms = []
        const_acc = 0.0
        for t in e.terms:
            t = simplify(t)
            if isinstance(t, Sum):
                inner = t.terms
            else:
                inner = (t,)
            for u in inner:
                if isinstance(u, Constant):
                    const_acc += u.value
                else:
                    terms.append(u)
        if const_acc != 0.0 or not terms:
            terms.append(Constant(const_acc))
        terms.sort(key=_sort_key)
        return terms[0] if len(terms) == 1 else Sum(tuple(terms))

    if isinstance(e, Product):
        factors = []
        const_acc = 1.0
        for t in e.terms:
            t = simplify(t)
            if isinstance(t, Product):
                inner = t.terms
            else:
                inner = (t,)
            for u in inner:
                if isinstance(u, Constant):
                    const_acc *= u.value
                else:
                    factors.append(u)
        if const_acc == 0.0:
            return Constant(0.0)
        merged: dict[Expr, int] = {}
        order: list[Expr] = []
        for f in factors:
            base, k = (f.base, f.exponent) if isinstance(f, Power) else (f, 1)
            if base not in merged:
                merged[base] = 0
                order.append(base)
            merged[base] += k
        factors = []
        for base in order:
            k = merged[base]
            if k == 0:
                continue
            factors.append(base if k == 1 else Power(base, k))
        if const_acc != 1.0 or not factors:
            factors.append(Constant(const_acc))
        factors.sort(key=_sort_key)
        return factors[0] if len(factors) == 1 else Product(tuple(factors))

    if isinstance(e, Power):
        base = simplify(e.base)
        k = e.exponent
        if k == 0:
            return Constant(1.0)
        if k == 1:
            return base
        if isinstance(base, Constant):
            if not (base.value == 0.0 and k < 0):
                try:
                    return Constant(base.value**k)
                except OverflowError:
                    pass
        if isinstance(base, Power):
            return simplify(Power(base.base, base.exponent * k))
        if isinstance(base, Product):
            return simplify(Product(tuple(Power(f, k) for f in base.terms)))
        return Power(base, k)

    arg = simplify(e.arg)
    if isinstance(arg, Constant):
        v = arg.value
        if isinstance(e, Sin):
            return Constant(math.sin(v))
        if isinstance(e, Cos):
            return Constant(math.cos(v))
        if isinstance(e, Exp):
            try:
                return Constant(math.exp(v))
            except OverflowError:
                pass
        if isinstance(e, Ln) and v > 0.0:
            return Constant(math.log(v))
        if isinstance(e, Reciprocal) and v != 0.0:
            return Constant(1.0 / v)
    if isinstance(e, Reciprocal) and isinstance(arg, Reciprocal):
        return arg.arg
    return type(e)(arg)


# ---------------------------------------------------------------------------
# Polynomiality


def is_polynomial(e: Expr, variables) -> bool:
    """True when the expression is polynomial in the given variables.

    Subexpressions containing none of the variables count as symbolic
    constants (parameters), whatever their shape, so e.g. ``k/M * x`` is
    polynomial in ``x``.
    """
    variables = frozenset(variables)
    e = simplify(e)

    def touches(node) -> bool:
        if isinstance(node, Variable):
            return node.name in variables
        if isinstance(node, Constant):
            return False
        if isinstance(node, _Nary):
            return any(touches(t) for t in node.terms)
        if isinstance(node, Power):
            return touches(node.base)
        return touches(node.arg)

    def check(node) -> bool:
        if not touches(node):
            return True
        if isinstance(node, (Constant, Variable)):
            return True
        if isinstance(node, _Nary):
            return all(check(t) for t in node.terms)
        if isinstance(node, Power):
            return node.exponent >= 0 and check(node.base)
        return False  # transcendental applied to the variables

    return check(e)


# ---------------------------------------------------------------------------
# Parsing


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        self._scan()
        self.index = 0

    def _scan(self):
        text = self.text
        i = 0
        n = len(text)
        while i < n:
            c = text[i]
            if c.isspace():
                i += 1
                continue
            if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
                j = i
                while j < n and (text[j].isdigit() or text[j] == "."):
                    j += 1
                if j < n and text[j] in "eE":
                    k = j + 1
                    if k < n and text[k] in "+-":
                        k += 1
                    if k < n and text[k].isdigit():
                        j = k
                        while j < n and text[j].isdigit():
                            j += 1
                self.tokens.append(("num", text[i:j], i))
                i = j
                continue
            if c.isalpha() or c == "_":
                j = i
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                self.tokens.append(("ident", text[i:j], i))
                i = j
                continue
            if c in "+-*/^()":
                self.tokens.append(("op", c, i))
                i += 1
                continue
            raise ParseError(f"unexpected character {c!r}", i)
        self.tokens.append(("end", "", n))

    def peek(self):
        return self.tokens[self.index]

    def next(self):
        tok = self.tokens[self.index]
        if tok[0] != "end":
            self.index += 1
        return tok

    def expect_op(self, symbol: str):
        kind, value, offset = self.peek()
        if kind != "op" or value != symbol:
            raise ParseError(f"expected {symbol!r}", offset)
        self.next()


def parse(text: str) -> Expr:
    """Parse the infix grammar used throughout the package.

    Precedence, tightest first: ``^`` (integer exponent), unary minus,
    ``* /``, ``+ -``.  Recognized functions: sin, cos, exp, ln.  Division by
    a non-constant denominator becomes a product with a reciprocal node.
    """
    tz = _Tokenizer(text)
    e = _parse_sum(tz)
    kind, value, offset = tz.peek()
    if kind != "end":
        raise ParseError(f"unexpected token {value!r}", offset)
    return e


def _parse_sum(tz: _Tokenizer) -> Expr:
    terms = [_parse_term(tz)]
    while True:
        kind, value, _ = tz.peek()
        if kind == "op" and value in "+-":
            tz.next()
            rhs = _parse_term(tz)
            terms.append(-rhs if value == "-" else rhs)
        else:
            break
    return terms[0] if len(terms) == 1 else Sum(tuple(terms))


def _parse_term(tz: _Tokenizer) -> Expr:
    factors = [_parse_factor(tz)]
    while True:
        kind, value, offset = tz.peek()
        if kind == "op" and value in "*/":
            tz.next()
            rhs = _parse_factor(tz)
            if value == "/":
                if isinstance(rhs, Constant):
                    if rhs.value == 0.0:
                        raise ParseError("division by constant zero", offset)
                    rhs = Constant(1.0 / rhs.value)
                else:
                    rhs = Reciprocal(rhs)
            factors.append(rhs)
        else:
            break
    return factors[0] if len(factors) == 1 else Product(tuple(factors))


def _parse_factor(tz: _Tokenizer) -> Expr:
    atom = _parse_atom(tz)
    kind, value, _ = tz.peek()
    if kind == "op" and value == "^":
        tz.next()
        sign = 1
        kind, value, offset = tz.peek()
        if kind == "op" and value == "-":
            tz.next()
            sign = -1
        kind, value, offset = tz.next()
        if kind != "num":
            raise ParseError("expected integer exponent after '^'", offset)
        as_float = float(value)
        if as_float != int(as_float):
            raise ParseError(f"exponent must be an integer, got {value}", offset)
        return Power(atom, sign * int(as_float))
    return atom


def _parse_atom(tz: _Tokenizer) -> Expr:
    kind, value, offset = tz.next()
    if kind == "num":
        return Constant(float(value))
    if kind == "ident":
        k2, v2, _ = tz.peek()
        if k2 == "op" and v2 == "(":
            if value not in _FUNCTION_NAMES:
                raise ParseError(f"unknown function {value!r}", offset)
            tz.next()
            inner = _parse_sum(tz)
            tz.expect_op(")")
            cls = {"sin": Sin, "cos": Cos, "exp": Exp, "ln": Ln}[value]
            return cls(inner)
        return Variable(value)
    if kind == "op" and value == "(":
        inner = _parse_sum(tz)
        tz.expect_op(")")
        return inner
    if kind == "op" and value == "-":
        # Unary minus binds looser than '^': -x^2 reads as -(x^2).
        return -_parse_factor(tz)
    raise ParseError(f"unexpected token {value!r}", offset)


# ---------------------------------------------------------------------------
# Printing


def _fmt_constant(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _atomic(e: Expr) -> bool:
    if isinstance(e, Constant):
        return e.value >= 0.0
    return isinstance(e, (Variable, Sin, Cos, Exp, Ln))


def to_string(e: Expr) -> str:
    """Render in the grammar accepted by :func:`parse`."""
    if isinstance(e, Constant):
        return _fmt_constant(e.value)
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Sin):
        return f"sin({to_string(e.arg)})"
    if isinstance(e, Cos):
        return f"cos({to_string(e.arg)})"
    if isinstance(e, Exp):
        return f"exp({to_string(e.arg)})"
    if isinstance(e, Ln):
        return f"ln({to_string(e.arg)})"
    if isinstance(e, Reciprocal):
        inner = to_string(e.arg)
        return f"1/{inner}" if _atomic(e.arg) else f"1/({inner})"
    if isinstance(e, Power):
        base = to_string(e.base)
        if not _atomic(e.base):
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if isinstance(e, Product):
        sign = ""
        numer = []
        denom = []
        for f in e.terms:
            if isinstance(f, Constant) and f.value < 0.0:
                sign = "-" if not sign else ""
                f = Constant(-f.value)
                if f.value == 1.0:
                    continue
            if isinstance(f, Reciprocal):
                inner = to_string(f.arg)
                denom.append(inner if _atomic(f.arg) else f"({inner})")
            else:
                s = to_string(f)
                if isinstance(f, (Sum, Product)):
                    s = f"({s})"
                numer.append(s)
        out = "*".join(numer) if numer else "1"
        for d in denom:
            out += f"/{d}"
        return sign + out
    if isinstance(e, Sum):
        parts = []
        for i, t in enumerate(e.terms):
            s = to_string(t)
            if isinstance(t, Sum):
                s = f"({s})"
            if i == 0:
                parts.append(s)
            elif s.startswith("-"):
                parts.append(f" - {s[1:]}")
            else:
                parts.append(f" + {s}")
        return "".join(parts)
    raise TypeError(f"not an expression: {e!r}")
