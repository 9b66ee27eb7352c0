"""Lie-derivative polynomialization of ODE systems and observable dictionaries.

A nonpolynomial system built from elementary functions (sin, cos, exp, ln,
reciprocals, and compositions of these) is lifted by introducing auxiliary
variables z_i = h_i(x) together with their Lie-derivative ODEs
dz_i/dt = dh_i/dx . f, repeated until every right-hand side is polynomial in
the enlarged variable set.  The transformation is exact: along any
trajectory of the lifted system started consistently, z_i(t) = h_i(x(t)).

The lifted system in turn defines an EDMD observable dictionary (states,
auxiliary functions, and the nonlinear monomials appearing in the lifted
right-hand sides).  Baseline monomial and thin-plate-spline dictionaries are
provided for comparison.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import programs
from .expr import (
    Constant,
    Cos,
    Exp,
    Expr,
    Ln,
    Power,
    Product,
    Reciprocal,
    Sin,
    Sum,
    Variable,
    evaluate,
    free_variables,
    is_polynomial,
    replace_subexpressions,
    simplify,
    substitute,
    to_string,
)


class LiftError(ValueError):
    """Polynomialization failed; the message says where and why."""


@dataclass(frozen=True)
class OdeSystem:
    """An autonomous ODE system dx/dt = f(x) with named states.

    Right-hand sides may reference parameter variables; their numeric values
    live in ``parameters`` and are substituted before any numeric work.
    """

    state_names: tuple[str, ...]
    rhs: tuple[Expr, ...]
    parameters: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "rhs", tuple(self.rhs))
        if len(self.rhs) != len(self.state_names):
            raise ValueError("one right-hand side per state is required")
        allowed = set(self.state_names) | set(self.parameters)
        for name, e in zip(self.state_names, self.rhs):
            extra = free_variables(e) - allowed
            if extra:
                raise ValueError(
                    f"rhs of {name!r} references unknown variables {sorted(extra)}"
                )

    @property
    def dim(self) -> int:
        return len(self.state_names)

    def bound_rhs(self) -> tuple[Expr, ...]:
        """Right-hand sides with parameter values substituted."""
        return tuple(simplify(substitute(e, self.parameters)) for e in self.rhs)

    def program(self) -> programs.Program:
        return programs.compile_exprs(self.bound_rhs(), self.state_names)


@dataclass(frozen=True)
class LiftedSystem:
    """Polynomial lift of a base system.

    ``aux_defs`` lists (name, defining expression) pairs in introduction
    order; each definition may reference base states and earlier auxiliary
    variables.  ``lifted_rhs`` holds one polynomial ODE per base state and
    per auxiliary variable, over the full lifted variable set.
    """

    base: OdeSystem
    aux_defs: tuple[tuple[str, Expr], ...]
    lifted_rhs: tuple[Expr, ...]

    @property
    def variable_names(self) -> tuple[str, ...]:
        return self.base.state_names + tuple(name for name, _ in self.aux_defs)

    @property
    def dim(self) -> int:
        return len(self.variable_names)

    def expanded_aux(self) -> dict[str, Expr]:
        """Auxiliary definitions rewritten over base states only."""
        out: dict[str, Expr] = {}
        for name, h in self.aux_defs:
            out[name] = simplify(substitute(h, out))
        return out

    def initial_state(self, x0) -> np.ndarray:
        """Consistent lifted initial condition [x0, h(x0)]."""
        x0 = np.asarray(x0, dtype=np.float64)
        env = dict(zip(self.base.state_names, x0.tolist()))
        env.update(self.base.parameters)
        values = list(x0)
        for name, h in self.aux_defs:
            env[name] = evaluate(h, env)
            values.append(env[name])
        return np.array(values)

    def bound_rhs(self) -> tuple[Expr, ...]:
        params = self.base.parameters
        return tuple(simplify(substitute(e, params)) for e in self.lifted_rhs)

    def program(self) -> programs.Program:
        return programs.compile_exprs(self.bound_rhs(), self.variable_names)


@dataclass(frozen=True)
class ObservableSet:
    """Ordered dictionary of scalar observables g_i over the base states.

    The first n entries are always the identity observables, so the state is
    recovered from a lifted vector by taking its leading block.
    """

    state_names: tuple[str, ...]
    entries: tuple[Expr, ...]
    kind: str = "custom"
    degree: int | None = None
    centers: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "entries", tuple(self.entries))
        n = len(self.state_names)
        leading = self.entries[:n]
        expected = tuple(Variable(s) for s in self.state_names)
        if leading != expected:
            raise ValueError("entries must start with the identity observables")

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def q(self) -> int:
        return len(self.entries)

    def program(self) -> programs.Program:
        prog = getattr(self, "_program", None)
        if prog is None:
            prog = programs.compile_exprs(self.entries, self.state_names)
            object.__setattr__(self, "_program", prog)
        return prog

    def evaluate_batch(self, states: np.ndarray) -> np.ndarray:
        """Evaluate all observables at states of shape (n, m) -> (q, m)."""
        return programs.evaluate(self.program(), states)

    def evaluate_point(self, x) -> np.ndarray:
        return programs.evaluate_at(self.program(), x)

    def jacobian_point(self, x) -> np.ndarray:
        """dg/dx at a point, shape (q, n); entries must be differentiable
        there (thin-plate splines are not at their own center)."""
        from .expr import differentiate

        prog = getattr(self, "_jacobian_program", None)
        if prog is None:
            exprs = [
                differentiate(e, s)
                for e in self.entries
                for s in self.state_names
            ]
            prog = programs.compile_exprs(exprs, self.state_names)
            object.__setattr__(self, "_jacobian_program", prog)
        return programs.evaluate_at(prog, x).reshape(self.q, self.n)


@dataclass(frozen=True)
class LiftRule:
    """A univariate lifting transformation: which elementary node it fires
    on, and whether the sine/cosine partner variable must come along."""

    node_type: type
    description: str
    introduces_partner: bool = False


LIFT_RULES: tuple[LiftRule, ...] = (
    LiftRule(Exp, "z = exp(u); dz = z * du"),
    LiftRule(Ln, "z = ln(u); dz = du / u, with 1/u lifted next"),
    LiftRule(Reciprocal, "z = 1/u; dz = -z^2 * du"),
    LiftRule(Sin, "z1 = sin(u), z2 = cos(u); dz1 = z2 du, dz2 = -z1 du",
             introduces_partner=True),
    LiftRule(Cos, "z1 = sin(u), z2 = cos(u); dz1 = z2 du, dz2 = -z1 du",
             introduces_partner=True),
)

_LIFTABLE_TYPES = tuple(rule.node_type for rule in LIFT_RULES)


def lie_derivative(h: Expr, system: OdeSystem) -> Expr:
    """Directional derivative of h along the system's vector field,
    sum_j dh/dx_j * f_j, simplified."""
    unknown = free_variables(h) - set(system.state_names) - set(system.parameters)
    if unknown:
        raise LiftError(f"unknown variables in observable: {sorted(unknown)}")
    return _lie(h, system.state_names, dict(zip(system.state_names, system.rhs)))


def _lie(h: Expr, var_names: Sequence[str], rhs_by_name: Mapping[str, Expr]) -> Expr:
    from .expr import differentiate

    terms = []
    names = free_variables(h)
    for v in var_names:
        if v in names:
            terms.append(Product((differentiate(h, v), rhs_by_name[v])))
    if not terms:
        return Constant(0.0)
    return simplify(Sum(tuple(terms)))


def _touches(e: Expr, variables: frozenset) -> bool:
    return bool(free_variables(e) & variables)


def _liftable_nodes(e: Expr, var_names: Sequence[str]) -> list[Expr]:
    """Innermost elementary nodes ready to lift: transcendentals of the
    lifted variables whose argument is already polynomial, plus negative
    powers of polynomial bases.  DFS postorder, so inner nodes come first."""
    variables = frozenset(var_names)
    found: list[Expr] = []

    def walk(node):
        if isinstance(node, (Sum, Product)):
            for t in node.terms:
                walk(t)
        elif isinstance(node, Power):
            walk(node.base)
            if (
                node.exponent < 0
                and _touches(node.base, variables)
                and is_polynomial(node.base, variables)
            ):
                found.append(node)
        elif isinstance(node, _LIFTABLE_TYPES):
            walk(node.arg)
            if _touches(node.arg, variables) and is_polynomial(node.arg, variables):
                found.append(node)

    walk(e)
    return found


def lift(system: OdeSystem, max_rounds: int = 10) -> LiftedSystem:
    """Polynomialize a system by introducing auxiliary variables.

    Strategy, chosen for determinism since the transformation is not unique:
    scan right-hand sides depth first and lift innermost elementary
    functions first, one nesting level per round.  Introducing sin(u) or
    cos(u) always introduces the pair (sine first), which the trigonometric
    derivative structure requires for closure.  Structurally identical
    subexpressions share one auxiliary variable.  Negative powers u^-k are
    rewritten through an auxiliary reciprocal y = 1/u.

    Raises LiftError if the system is still nonpolynomial after
    ``max_rounds`` lifting rounds.
    """
    params = set(system.parameters)
    var_names = list(system.state_names)
    rhs = [simplify(e) for e in system.rhs]
    aux_defs: list[tuple[str, Expr]] = []
    replacement: dict[Expr, Expr] = {}
    counter = 1

    def fresh_name() -> str:
        nonlocal counter
        while True:
            name = f"z{counter}"
            counter += 1
            if name not in var_names and name not in params:
                return name

    def define(h: Expr) -> Variable:
        name = fresh_name()
        v = Variable(name)
        aux_defs.append((name, h))
        replacement[h] = v
        return v

    for _ in range(max_rounds + 1):
        rhs = [simplify(replace_subexpressions(e, replacement)) for e in rhs]
        if all(is_polynomial(e, var_names) for e in rhs):
            return LiftedSystem(
                base=system, aux_defs=tuple(aux_defs), lifted_rhs=tuple(rhs)
            )

        targets: list[Expr] = []
        for e in rhs:
            for node in _liftable_nodes(e, var_names):
                if node not in targets:
                    targets.append(node)
        if not targets:
            raise LiftError(
                "no liftable elementary subexpression found; right-hand "
                "sides contain unsupported structure under a transcendental"
            )

        rhs_by_name = dict(zip(var_names, rhs))
        new_defs: list[tuple[str, Expr]] = []
        for node in targets:
            if node in replacement:
                continue
            if isinstance(node, (Sin, Cos)):
                u = node.arg
                for trig in (Sin(u), Cos(u)):
                    if trig not in replacement:
                        define(trig)
                        new_defs.append(aux_defs[-1])
            elif isinstance(node, Power):
                inv = Reciprocal(node.base)
                if inv not in replacement:
                    define(inv)
                    new_defs.append(aux_defs[-1])
                replacement[node] = Power(replacement[inv], -node.exponent)
            else:
                define(node)
                new_defs.append(aux_defs[-1])

        for name, h in new_defs:
            dz = _lie(h, tuple(rhs_by_name), rhs_by_name)
            var_names.append(name)
            rhs.append(dz)

    raise LiftError(
        f"system is still not polynomial after {max_rounds} lifting rounds; "
        f"pending variables: {var_names}"
    )


# ---------------------------------------------------------------------------
# Observable dictionaries


def _poly_exponents(e: Expr, var_order: Sequence[str]) -> list[tuple[int, ...]]:
    """Exponent vectors of the additive terms of a polynomial expression,
    coefficients (including parameter factors) ignored."""
    variables = frozenset(var_order)
    index = {v: i for i, v in enumerate(var_order)}

    def term_vectors(node) -> list[tuple[int, ...]]:
        zero = tuple([0] * len(var_order))
        if not _touches(node, variables):
            return [zero]
        if isinstance(node, Variable):
            vec = list(zero)
            vec[index[node.name]] = 1
            return [tuple(vec)]
        if isinstance(node, Sum):
            out = []
            for t in node.terms:
                out.extend(term_vectors(t))
            return out
        if isinstance(node, Product):
            out = [zero]
            for f in node.terms:
                out = [
                    tuple(a + b for a, b in zip(u, v))
                    for u in out
                    for v in term_vectors(f)
                ]
            return out
        if isinstance(node, Power):
            if node.exponent < 0:
                raise LiftError("negative power in supposed polynomial")
            out = [zero]
            for _ in range(node.exponent):
                out = [
                    tuple(a + b for a, b in zip(u, v))
                    for u in out
                    for v in term_vectors(node.base)
                ]
            return out
        raise LiftError(f"nonpolynomial factor {to_string(node)!r}")

    return term_vectors(simplify(e))


def _monomial_expr(vec: Sequence[int], var_order: Sequence[str]) -> Expr:
    factors = [
        Variable(v) if k == 1 else Power(Variable(v), k)
        for v, k in zip(var_order, vec)
        if k > 0
    ]
    if not factors:
        return Constant(1.0)
    return simplify(Product(tuple(factors)))


def _monomial_sort_key(vec: Sequence[int]):
    # Ascending total degree, then lexicographic with the leading variable
    # dominant (x1^2 before x1*x2 before x2^2).
    return (sum(vec), tuple(-k for k in vec))


def observables_from_lift(lifted: LiftedSystem) -> ObservableSet:
    """Dictionary suggested by a lift: identity observables, the auxiliary
    functions, then every distinct nonlinear monomial of the lifted
    right-hand sides with auxiliary symbols substituted back.

    Parameter values are bound so entries are directly evaluable.  Warns if
    the result has no more entries than states (nothing nonlinear to gain).
    """
    base = lifted.base
    names = lifted.variable_names
    expanded = {
        name: simplify(substitute(h, base.parameters))
        for name, h in lifted.expanded_aux().items()
    }

    entries: list[Expr] = [Variable(s) for s in base.state_names]
    seen = set(entries)

    def add(e: Expr):
        e = simplify(e)
        if e not in seen:
            seen.add(e)
            entries.append(e)

    for name, _ in lifted.aux_defs:
        add(expanded[name])

    monomials: set[tuple[int, ...]] = set()
    for e in lifted.lifted_rhs:
        for vec in _poly_exponents(e, names):
            if sum(vec) >= 2:
                monomials.add(vec)
    for vec in sorted(monomials, key=_monomial_sort_key):
        add(substitute(_monomial_expr(vec, names), expanded))

    if len(entries) <= len(base.state_names):
        warnings.warn(
            "lift produced no nonlinear observables; the dictionary is just "
            "the identity",
            stacklevel=2,
        )
    return ObservableSet(
        state_names=base.state_names, entries=tuple(entries), kind="lie"
    )


def monomial_dictionary(
    n: int, degree: int, state_names: Sequence[str] | None = None
) -> ObservableSet:
    """All monomials of the states with total degree 1..degree, no constant
    term.  Ordered by ascending degree, then lexicographically with earlier
    states dominant; the count is C(n+degree, degree) - 1."""
    if n < 1:
        raise ValueError("need at least one state")
    if degree < 1:
        raise ValueError("degree must be at least 1")
    if state_names is None:
        state_names = tuple(f"x{i + 1}" for i in range(n))
    state_names = tuple(state_names)
    if len(state_names) != n:
        raise ValueError("state_names length must equal n")

    vectors = []
    for d in range(1, degree + 1):
        level = [
            vec
            for vec in itertools.product(range(d + 1), repeat=n)
            if sum(vec) == d
        ]
        level.sort(key=lambda vec: tuple(-k for k in vec))
        vectors.extend(level)
    entries = tuple(_monomial_expr(vec, state_names) for vec in vectors)
    return ObservableSet(
        state_names=state_names, entries=entries, kind="monomial", degree=degree
    )


def rbf_dictionary(
    n: int,
    total: int,
    centers: Iterable[Sequence[float]],
    state_names: Sequence[str] | None = None,
) -> ObservableSet:
    """Identity observables plus thin-plate spline radial basis functions
    ||x - c||^2 ln ||x - c|| centered at the given points.

    Entries are stored as (1/2) s ln s with s = ||x - c||^2; the evaluator's
    fused x*ln(x) instruction gives the limit value 0 at the center itself.
    """
    if state_names is None:
        state_names = tuple(f"x{i + 1}" for i in range(n))
    state_names = tuple(state_names)
    if len(state_names) != n:
        raise ValueError("state_names length must equal n")
    if total <= n:
        raise ValueError("total must exceed the state dimension")
    centers = tuple(tuple(float(c) for c in center) for center in centers)
    if len(centers) != total - n:
        raise ValueError(f"expected {total - n} centers, got {len(centers)}")
    if len(set(centers)) != len(centers):
        raise ValueError("duplicate centers")
    for center in centers:
        if len(center) != n:
            raise ValueError("center dimension mismatch")

    entries: list[Expr] = [Variable(s) for s in state_names]
    for center in centers:
        s = simplify(
            Sum(
                tuple(
                    Power(Sum((Variable(v), Constant(-c))), 2)
                    for v, c in zip(state_names, center)
                )
            )
        )
        entries.append(Product((Constant(0.5), s, Ln(s))))
    return ObservableSet(
        state_names=state_names, entries=tuple(entries), kind="rbf", centers=centers
    )


# ---------------------------------------------------------------------------
# Text serialization


def dump_system(system: OdeSystem) -> str:
    """Serialize to the line format 'name' = expr' plus 'param name = value'."""
    lines = [
        f"{name}' = {to_string(simplify(e))}"
        for name, e in zip(system.state_names, system.rhs)
    ]
    for name in sorted(system.parameters):
        lines.append(f"param {name} = {system.parameters[name]!r}")
    return "\n".join(lines) + "\n"


def dump_lifted(lifted: LiftedSystem) -> str:
    """Serialize a lifted system: base ODEs, auxiliary definitions,
    auxiliary ODEs, then parameters.  Ordering is part of the format."""
    names = lifted.variable_names
    lines = []
    nbase = lifted.base.dim
    for name, e in zip(names[:nbase], lifted.lifted_rhs[:nbase]):
        lines.append(f"{name}' = {to_string(e)}")
    for name, h in lifted.aux_defs:
        lines.append(f"{name} = {to_string(h)}")
    for name, e in zip(names[nbase:], lifted.lifted_rhs[nbase:]):
        lines.append(f"{name}' = {to_string(e)}")
    for name in sorted(lifted.base.parameters):
        lines.append(f"param {name} = {lifted.base.parameters[name]!r}")
    return "\n".join(lines) + "\n"


def dump_observables(obs: ObservableSet) -> str:
    header = f"# observables kind={obs.kind} n={obs.n} q={obs.q}"
    lines = [header]
    for i, e in enumerate(obs.entries, start=1):
        lines.append(f"g{i} = {to_string(e)}")
    return "\n".join(lines) + "\n"


def parse_system(text: str) -> OdeSystem:
    """Parse the dump_system format back into a system."""
    from .expr import parse

    odes: list[tuple[str, Expr]] = []
    parameters: dict[str, float] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lhs, _, rhs_text = line.partition("=")
        lhs = lhs.strip()
        rhs_text = rhs_text.strip()
        if not rhs_text:
            raise ValueError(f"missing '=' in line {raw!r}")
        if lhs.startswith("param "):
            parameters[lhs[len("param ") :].strip()] = float(rhs_text)
        elif lhs.endswith("'"):
            odes.append((lhs[:-1].strip(), parse(rhs_text)))
        else:
            raise ValueError(
                f"only ODE lines (name' = expr) and param lines are valid "
                f"in a system file, got {raw!r}"
            )
    if not odes:
        raise ValueError("no ODE lines found")
    return OdeSystem(
        state_names=tuple(name for name, _ in odes),
        rhs=tuple(e for _, e in odes),
        parameters=parameters,
    )


def load_system(path) -> OdeSystem:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_system(fh.read())
