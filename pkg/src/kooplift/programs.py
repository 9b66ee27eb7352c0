"""Compilation of expression trees into flat register programs.

Evaluating expression trees node by node is far too slow for the hot paths
(dictionary application over thousands of snapshot columns, Runge-Kutta
stages, per-step filter re-lifting), so expressions are compiled once into a
linear three-address program.  The program is executed either by the Cython
kernel (kooplift._core) or by the vectorized numpy interpreter
(kooplift._core_py); both implement identical semantics and the active one
is chosen at import time by kooplift._backend.

Common subexpressions are shared across all outputs of a program set, which
matters for dictionaries where sin/cos terms repeat.  A product containing
both ``u`` and ``ln(u)`` is fused into a single x*ln(x) instruction whose
value at 0 is the limit 0; thin-plate spline observables rely on this to be
finite at their own center.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
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
)

OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_MUL = 3
OP_POW = 4
OP_SIN = 5
OP_COS = 6
OP_EXP = 7
OP_LOG = 8
OP_RECIP = 9
OP_XLOGY = 10


@dataclass(frozen=True)
class Program:
    """A set of expressions compiled over a common variable frame."""

    var_names: tuple[str, ...]
    ops: np.ndarray
    arg1: np.ndarray
    arg2: np.ndarray
    consts: np.ndarray
    out_regs: np.ndarray
    n_regs: int = field(default=0)

    @property
    def n_outputs(self) -> int:
        return len(self.out_regs)


class _Builder:
    def __init__(self, var_names: Sequence[str]):
        self.var_index = {name: i for i, name in enumerate(var_names)}
        self.var_names = tuple(var_names)
        self.code: list[tuple[int, int, int]] = []
        self.cse: dict[tuple, int] = {}
        self.consts: list[float] = []
        self.const_index: dict[float, int] = {}

    def emit(self, op: int, a: int = 0, b: int = 0) -> int:
        key = (op, a, b)
        reg = self.cse.get(key)
        if reg is None:
            reg = len(self.code)
            self.code.append(key)
            self.cse[key] = reg
        return reg

    def const(self, value: float) -> int:
        idx = self.const_index.get(value)
        if idx is None:
            idx = len(self.consts)
            self.consts.append(value)
            self.const_index[value] = idx
        return self.emit(OP_CONST, 0, idx)

    def compile(self, e: Expr) -> int:
        if isinstance(e, Constant):
            return self.const(e.value)
        if isinstance(e, Variable):
            try:
                return self.emit(OP_VAR, 0, self.var_index[e.name])
            except KeyError:
                raise KeyError(
                    f"variable {e.name!r} is not in the compilation frame "
                    f"{self.var_names}; bind parameters before compiling"
                ) from None
        if isinstance(e, Sum):
            regs = [self.compile(t) for t in e.terms]
            acc = regs[0]
            for r in regs[1:]:
                acc = self.emit(OP_ADD, acc, r)
            return acc
        if isinstance(e, Product):
            return self._compile_product(e)
        if isinstance(e, Power):
            if e.exponent == 0:
                return self.const(1.0)
            base = self.compile(e.base)
            if e.exponent == 1:
                return base
            return self.emit(OP_POW, base, e.exponent)
        if isinstance(e, Sin):
            return self.emit(OP_SIN, self.compile(e.arg))
        if isinstance(e, Cos):
            return self.emit(OP_COS, self.compile(e.arg))
        if isinstance(e, Exp):
            return self.emit(OP_EXP, self.compile(e.arg))
        if isinstance(e, Ln):
            return self.emit(OP_LOG, self.compile(e.arg))
        if isinstance(e, Reciprocal):
            return self.emit(OP_RECIP, self.compile(e.arg))
        raise TypeError(f"not an expression: {e!r}")

    def _compile_product(self, e: Product) -> int:
        # Pair each ln(u) factor with a structurally equal factor u and fuse
        # them into x*ln(x); everything else multiplies in order.
        factors = list(e.terms)
        used = [False] * len(factors)
        regs: list[int] = []
        for i, f in enumerate(factors):
            if used[i] or not isinstance(f, Ln):
                continue
            for j, g in enumerate(factors):
                if not used[j] and i != j and g == f.arg:
                    used[i] = used[j] = True
                    regs.append(self.emit(OP_XLOGY, self.compile(f.arg)))
                    break
        for i, f in enumerate(factors):
            if not used[i]:
                regs.append(self.compile(f))
        acc = regs[0]
        for r in regs[1:]:
            acc = self.emit(OP_MUL, acc, r)
        return acc


def compile_exprs(exprs: Sequence[Expr], var_names: Sequence[str]) -> Program:
    """Compile expressions into one program with shared subexpressions.

    Every free variable of every expression must appear in ``var_names``;
    substitute numeric parameter values first.
    """
    if not exprs or not var_names:
        raise ValueError("need at least one expression and one variable")
    b = _Builder(var_names)
    out_regs = [b.compile(e) for e in exprs]
    ops = np.array([c[0] for c in b.code], dtype=np.int32)
    arg1 = np.array([c[1] for c in b.code], dtype=np.int32)
    arg2 = np.array([c[2] for c in b.code], dtype=np.int32)
    consts = np.asarray(b.consts, dtype=np.float64)
    return Program(
        var_names=b.var_names,
        ops=ops,
        arg1=arg1,
        arg2=arg2,
        consts=consts,
        out_regs=np.asarray(out_regs, dtype=np.int32),
        n_regs=len(b.code),
    )


def evaluate(prog: Program, points: np.ndarray) -> np.ndarray:
    """Evaluate all outputs at a batch of points.

    ``points`` has shape (n_vars, m); the result has shape (n_outputs, m).
    Domain violations do not raise here; they surface as non-finite entries
    for the caller to check.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] != len(prog.var_names):
        raise ValueError(
            f"expected points of shape ({len(prog.var_names)}, m), "
            f"got {points.shape}"
        )
    return _backend.impl.eval_programs(
        prog.ops, prog.arg1, prog.arg2, prog.consts, prog.out_regs, prog.n_regs, points
    )


def evaluate_at(prog: Program, point) -> np.ndarray:
    """Evaluate all outputs at a single point (1-D array of n_vars)."""
    col = np.asarray(point, dtype=np.float64).reshape(-1, 1)
    return evaluate(prog, col)[:, 0]


def rk4(
    prog: Program, x0: np.ndarray, h: float, steps: int, substeps: int
) -> tuple[np.ndarray, int, int]:
    """Classical fixed-step RK4 on ``dx/dt = prog(x)`` for a batch of
    initial states.

    ``x0`` has shape (batch, n); n must equal both the program's variable
    count and its output count.  Internal step is ``h / substeps``; states
    are recorded every ``h``.  Returns ``(trajectories, bad_batch,
    bad_step)`` where the trajectory array has shape (batch, steps+1, n) and
    the bad indices are -1 when every recorded state is finite.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    n = len(prog.var_names)
    if x0.ndim != 2 or x0.shape[1] != n or prog.n_outputs != n:
        raise ValueError("rk4 needs a square system: outputs == variables")
    if steps < 0 or substeps < 1 or h <= 0:
        raise ValueError("rk4 needs h > 0, steps >= 0, substeps >= 1")
    return _backend.impl.rk4_batch(
        prog.ops,
        prog.arg1,
        prog.arg2,
        prog.consts,
        prog.out_regs,
        prog.n_regs,
        x0,
        float(h),
        int(steps),
        int(substeps),
    )
