# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel for expression-program evaluation and RK4 integration.

Semantics match kooplift._core_py instruction for instruction; see there for
the opcode table.
"""

from libc.math cimport sin, cos, exp, log, isfinite, NAN

import numpy as np


cdef inline void _eval_point(const int[::1] ops, const int[::1] arg1,
                             const int[::1] arg2, const double[::1] consts,
                             const double* point, double* regs) noexcept nogil:
    cdef Py_ssize_t i
    cdef int op, a, b, k
    cdef bint neg
    cdef double acc, sq, u
    for i in range(ops.shape[0]):
        op = ops[i]
        a = arg1[i]
        b = arg2[i]
        if op == 0:       # CONST
            regs[i] = consts[b]
        elif op == 1:     # VAR
            regs[i] = point[b]
        elif op == 2:     # ADD
            regs[i] = regs[a] + regs[b]
        elif op == 3:     # MUL
            regs[i] = regs[a] * regs[b]
        elif op == 4:     # POW, exponentiation by squaring
            k = b
            neg = k < 0
            if neg:
                k = -k
            acc = 1.0
            sq = regs[a]
            while k:
                if k & 1:
                    acc = acc * sq
                k = k >> 1
                if k:
                    sq = sq * sq
            regs[i] = 1.0 / acc if neg else acc
        elif op == 5:     # SIN
            regs[i] = sin(regs[a])
        elif op == 6:     # COS
            regs[i] = cos(regs[a])
        elif op == 7:     # EXP
            regs[i] = exp(regs[a])
        elif op == 8:     # LOG
            regs[i] = log(regs[a])
        elif op == 9:     # RECIP
            regs[i] = 1.0 / regs[a]
        else:             # XLOGY, limit value 0 at 0
            u = regs[a]
            if u > 0.0:
                regs[i] = u * log(u)
            elif u == 0.0:
                regs[i] = 0.0
            else:
                regs[i] = NAN


def eval_programs(ops, arg1, arg2, consts, out_regs, n_regs, points):
    """Evaluate a program at points of shape (n_vars, m) -> (q, m)."""
    cdef const int[::1] ops_v = ops
    cdef const int[::1] a1_v = arg1
    cdef const int[::1] a2_v = arg2
    cdef const double[::1] consts_v = consts
    cdef const int[::1] out_v = out_regs
    cdef const double[:, ::1] pts = points
    cdef Py_ssize_t n_vars = pts.shape[0]
    cdef Py_ssize_t m = pts.shape[1]
    cdef Py_ssize_t q = out_v.shape[0]

    out = np.empty((q, m), dtype=np.float64)
    cdef double[:, ::1] out_v2 = out
    regs_arr = np.empty(n_regs, dtype=np.float64)
    cdef double[::1] regs = regs_arr
    point_arr = np.empty(n_vars, dtype=np.float64)
    cdef double[::1] point = point_arr

    cdef Py_ssize_t j, v, i
    with nogil:
        for j in range(m):
            for v in range(n_vars):
                point[v] = pts[v, j]
            _eval_point(ops_v, a1_v, a2_v, consts_v, &point[0], &regs[0])
            for i in range(q):
                out_v2[i, j] = regs[out_v[i]]
    return out


def rk4_batch(ops, arg1, arg2, consts, out_regs, n_regs, x0, double h,
              int steps, int substeps):
    """Fixed-step RK4 per batch point; see the fallback for the contract."""
    cdef const int[::1] ops_v = ops
    cdef const int[::1] a1_v = arg1
    cdef const int[::1] a2_v = arg2
    cdef const double[::1] consts_v = consts
    cdef const int[::1] out_v = out_regs
    cdef const double[:, ::1] x0_v = x0
    cdef Py_ssize_t batch = x0_v.shape[0]
    cdef Py_ssize_t n = x0_v.shape[1]

    traj = np.empty((batch, steps + 1, n), dtype=np.float64)
    cdef double[:, :, ::1] traj_v = traj
    regs_arr = np.empty(n_regs, dtype=np.float64)
    cdef double[::1] regs = regs_arr
    work = np.empty((6, n), dtype=np.float64)
    cdef double[:, ::1] w = work

    cdef double dt = h / substeps
    cdef Py_ssize_t b, i, step, sub
    cdef int bad_step, first_bad_step = -1, first_bad_batch = -1
    cdef bint ok

    with nogil:
        for b in range(batch):
            for i in range(n):
                w[0, i] = x0_v[b, i]          # y
                traj_v[b, 0, i] = w[0, i]
            bad_step = -1
            for step in range(1, steps + 1):
                for sub in range(substeps):
                    _eval_point(ops_v, a1_v, a2_v, consts_v, &w[0, 0], &regs[0])
                    for i in range(n):
                        w[1, i] = regs[out_v[i]]                     # k1
                        w[5, i] = w[0, i] + 0.5 * dt * w[1, i]
                    _eval_point(ops_v, a1_v, a2_v, consts_v, &w[5, 0], &regs[0])
                    for i in range(n):
                        w[2, i] = regs[out_v[i]]                     # k2
                        w[5, i] = w[0, i] + 0.5 * dt * w[2, i]
                    _eval_point(ops_v, a1_v, a2_v, consts_v, &w[5, 0], &regs[0])
                    for i in range(n):
                        w[3, i] = regs[out_v[i]]                     # k3
                        w[5, i] = w[0, i] + dt * w[3, i]
                    _eval_point(ops_v, a1_v, a2_v, consts_v, &w[5, 0], &regs[0])
                    for i in range(n):
                        w[4, i] = regs[out_v[i]]                     # k4
                        w[0, i] = w[0, i] + (dt / 6.0) * (
                            w[1, i] + 2.0 * w[2, i] + 2.0 * w[3, i] + w[4, i]
                        )
                ok = True
                for i in range(n):
                    traj_v[b, step, i] = w[0, i]
                    if not isfinite(w[0, i]):
                        ok = False
                if not ok:
                    bad_step = <int> step
                    break
            if bad_step != -1 and (
                first_bad_step == -1 or bad_step < first_bad_step
            ):
                first_bad_step = bad_step
                first_bad_batch = <int> b

    if first_bad_step != -1:
        return traj[:, : first_bad_step + 1, :], first_bad_batch, first_bad_step
    return traj, -1, -1
