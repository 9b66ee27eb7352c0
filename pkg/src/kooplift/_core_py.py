"""Pure-Python (numpy) interpreter for compiled expression programs.

Mirrors the semantics of the Cython kernel in _core.pyx exactly: one
register per instruction, vectorized over evaluation points.  Used whenever
the compiled extension is unavailable or disabled via KOOPLIFT_PURE_PYTHON.
"""

from __future__ import annotations

import numpy as np

_OP_CONST = 0
_OP_VAR = 1
_OP_ADD = 2
_OP_MUL = 3
_OP_POW = 4
_OP_SIN = 5
_OP_COS = 6
_OP_EXP = 7
_OP_LOG = 8
_OP_RECIP = 9
_OP_XLOGY = 10


def eval_programs(ops, arg1, arg2, consts, out_regs, n_regs, points):
    """Evaluate a program at points of shape (n_vars, m) -> (q, m)."""
    m = points.shape[1]
    regs = np.empty((n_regs, m), dtype=np.float64)
    with np.errstate(all="ignore"):
        for i in range(len(ops)):
            op = ops[i]
            a = arg1[i]
            b = arg2[i]
            if op == _OP_CONST:
                regs[i] = consts[b]
            elif op == _OP_VAR:
                regs[i] = points[b]
            elif op == _OP_ADD:
                np.add(regs[a], regs[b], out=regs[i])
            elif op == _OP_MUL:
                np.multiply(regs[a], regs[b], out=regs[i])
            elif op == _OP_POW:
                _int_power(regs[a], int(b), out=regs[i])
            elif op == _OP_SIN:
                np.sin(regs[a], out=regs[i])
            elif op == _OP_COS:
                np.cos(regs[a], out=regs[i])
            elif op == _OP_EXP:
                np.exp(regs[a], out=regs[i])
            elif op == _OP_LOG:
                np.log(regs[a], out=regs[i])
            elif op == _OP_RECIP:
                np.divide(1.0, regs[a], out=regs[i])
            elif op == _OP_XLOGY:
                _xlogy(regs[a], out=regs[i])
            else:
                raise ValueError(f"unknown opcode {op}")
    return regs[np.asarray(out_regs)]


def _int_power(base, k, out):
    # Exponentiation by squaring, matching pow() on negative bases with
    # integer exponents.
    if k < 0:
        _int_power(base, -k, out)
        np.divide(1.0, out, out=out)
        return
    out[...] = 1.0
    square = base.copy()
    while k:
        if k & 1:
            np.multiply(out, square, out=out)
        k >>= 1
        if k:
            np.multiply(square, square, out=square)


def _xlogy(u, out):
    # x*ln(x) with the limit value 0 at x == 0; negative x gives nan.
    positive = u > 0.0
    np.log(np.where(positive, u, 1.0), out=out)
    np.multiply(out, u, out=out)
    np.copyto(out, np.nan, where=u < 0.0)


def rk4_batch(ops, arg1, arg2, consts, out_regs, n_regs, x0, h, steps, substeps):
    """Fixed-step RK4 for a batch of initial states, vectorized over the
    batch.  Returns (traj, bad_batch, bad_step); bad indices are -1 when all
    recorded states are finite, otherwise they locate the first non-finite
    recorded state."""
    batch, n = x0.shape
    traj = np.empty((batch, steps + 1, n), dtype=np.float64)
    traj[:, 0, :] = x0
    y = x0.T.copy()  # (n, batch) for program evaluation
    dt = h / substeps
    args = (ops, arg1, arg2, consts, out_regs, n_regs)
    for step in range(1, steps + 1):
        for _ in range(substeps):
            k1 = eval_programs(*args, y)
            k2 = eval_programs(*args, y + 0.5 * dt * k1)
            k3 = eval_programs(*args, y + 0.5 * dt * k2)
            k4 = eval_programs(*args, y + dt * k3)
            y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[:, step, :] = y.T
        if not np.isfinite(y).all():
            bad = int(np.flatnonzero(~np.isfinite(y).all(axis=0))[0])
            return traj[:, : step + 1, :], bad, step
    return traj, -1, -1
