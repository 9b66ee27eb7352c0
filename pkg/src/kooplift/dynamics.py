"""Trajectory integration and the single-machine infinite-bus benchmark.

The SMIB model is the classical generator model behind a series impedance
against an ideal bus.  From raw network data the builder solves the power
flow for the terminal angle, derives the internal EMF phasor, and emits the
swing equations in coordinates shifted so the stable fixed point sits at the
origin:

    dx1/dt = x2
    dx2/dt = (k1 + k2 cos x1 + k3 sin x1 - (D/ws) x2) / M

Real and reactive electrical power at the internal node serve as the
measurement channels for the lifted-state Kalman filter.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import programs
from .expr import Variable, cos, differentiate, evaluate, sin
from .polylift import LiftedSystem, OdeSystem


class IntegrationError(RuntimeError):
    """A trajectory left the representable range; carries the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class Trajectory:
    """Equally spaced samples of a state trajectory.

    ``states`` has shape (num_samples, n); ``meta`` carries optional
    diagnostics (prediction residuals and the like).
    """

    dt: float
    states: np.ndarray
    state_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2:
            raise ValueError("states must be 2-D (samples, dim)")
        object.__setattr__(self, "states", states)
        if not self.state_names:
            object.__setattr__(
                self,
                "state_names",
                tuple(f"x{i + 1}" for i in range(states.shape[1])),
            )

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.states.shape[0])

    def to_csv(self, path) -> None:
        write_csv(
            path,
            ("t", *self.state_names),
            np.column_stack([self.times, self.states]),
        )


def write_csv(path, header: Sequence[str], rows) -> None:
    """Write a numeric table with full double precision (17 significant
    digits), deterministically."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


def _fmt_cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass(frozen=True)
class LatticeSpec:
    """Per-dimension (start, step, stop) triples describing a sampling grid."""

    axes: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "axes", tuple(tuple(float(v) for v in ax) for ax in self.axes)
        )
        for start, step, stop in self.axes:
            if step <= 0:
                raise ValueError("lattice step must be positive")
            if start > stop:
                raise ValueError("lattice start must not exceed stop")

    def axis_values(self, i: int) -> np.ndarray:
        start, step, stop = self.axes[i]
        count = int(math.floor((stop - start) / step + 0.5)) + 1
        return start + step * np.arange(count)


def sample_lattice(spec: LatticeSpec) -> np.ndarray:
    """All lattice points, row-major (first dimension slowest)."""
    values = [spec.axis_values(i) for i in range(len(spec.axes))]
    grids = np.meshgrid(*values, indexing="ij")
    return np.column_stack([g.reshape(-1) for g in grids])


System = Union[OdeSystem, LiftedSystem]


def _system_frame(system: System) -> tuple[programs.Program, tuple[str, ...]]:
    if isinstance(system, LiftedSystem):
        return system.program(), system.variable_names
    return system.program(), system.state_names


def integrate_rk4(
    system: System,
    x0,
    dt_out: float,
    steps: int,
    substeps: int = 5,
) -> Trajectory:
    """Classical 4th-order Runge-Kutta with internal step dt_out/substeps,
    recording states at multiples of dt_out."""
    return integrate_batch(system, [x0], dt_out, steps, substeps)[0]


def integrate_batch(
    system: System,
    x0s,
    dt_out: float,
    steps: int,
    substeps: int = 5,
) -> list[Trajectory]:
    """Integrate several initial states of the same system.

    The integrations are independent; results always come back in input
    order, so downstream snapshot matrices are deterministic.
    """
    prog, names = _system_frame(system)
    x0s = np.atleast_2d(np.asarray(x0s, dtype=np.float64))
    if x0s.shape[1] != len(names):
        raise ValueError(
            f"initial states have dimension {x0s.shape[1]}, "
            f"system has {len(names)} variables"
        )
    traj, bad_batch, bad_step = programs.rk4(prog, x0s, dt_out, steps, substeps)
    if bad_step != -1:
        raise IntegrationError(
            f"trajectory {bad_batch} diverged (non-finite state) at "
            f"step {bad_step} (t = {bad_step * dt_out:.6g})",
            step=bad_step,
        )
    return [Trajectory(dt=dt_out, states=traj[b], state_names=names)
            for b in range(traj.shape[0])]


# ---------------------------------------------------------------------------
# SMIB benchmark model


@dataclass(frozen=True)
class SmibParams:
    """Raw network and machine data, per unit except H (MJ/MVA) and f (Hz)."""

    R: float = 0.05
    X: float = 0.30
    V1: float = 1.05
    V2: float = 1.00
    P: float = 0.80
    Xd_prime: float = 0.20
    D: float = 10.0
    H: float = 5.0
    f: float = 60.0

    def __post_init__(self):
        for name in ("R", "X", "V1", "V2", "P", "Xd_prime", "D", "H", "f"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SmibDerived:
    """Constants derived from SmibParams: operating point, internal EMF,
    equivalent admittance, and the shifted swing-equation coefficients."""

    theta1: float
    E: float
    delta0: float
    omega_s: float
    M: float
    G_eq: float
    B_eq: float
    k1: float
    k2: float
    k3: float
    c2: float
    c3: float
    P_m: float


def smib_build(params: SmibParams = SmibParams()) -> tuple[OdeSystem, SmibDerived]:
    """Construct the shifted SMIB swing equations from raw data.

    Solves the terminal power balance for the terminal angle by bisection on
    (0, pi/2) followed by two Newton polish steps, derives the internal EMF
    phasor and the equivalent admittance seen from it, and shifts
    coordinates so the operating point becomes the origin.
    """
    p = params
    z_line = complex(p.R, p.X)
    if z_line == 0:
        raise ValueError("singular admittance: R + jX is zero")
    Y = 1.0 / z_line
    G, B = Y.real, Y.imag

    def power_balance(theta: float) -> float:
        return (
            p.V1**2 * G
            - p.V1 * p.V2 * G * math.cos(theta)
            - p.V1 * p.V2 * B * math.sin(theta)
            - p.P
        )

    def power_balance_slope(theta: float) -> float:
        return p.V1 * p.V2 * (G * math.sin(theta) - B * math.cos(theta))

    lo, hi = 0.0, math.pi / 2
    f_lo, f_hi = power_balance(lo), power_balance(hi)
    if f_lo == 0.0:
        theta1 = lo
    elif f_hi == 0.0:
        theta1 = hi
    elif f_lo * f_hi > 0:
        raise ValueError("no sign change in the terminal-angle bracket (0, pi/2)")
    else:
        while hi - lo > 1e-12:
            mid = 0.5 * (lo + hi)
            if f_lo * power_balance(mid) <= 0:
                hi = mid
            else:
                lo = mid
                f_lo = power_balance(lo)
        theta1 = 0.5 * (lo + hi)
        for _ in range(2):
            theta1 -= power_balance(theta1) / power_balance_slope(theta1)

    V1_ph = p.V1 * cmath.exp(1j * theta1)
    current = (V1_ph - p.V2) * Y
    E_ph = V1_ph + 1j * p.Xd_prime * current
    E, delta0 = abs(E_ph), cmath.phase(E_ph)

    z_eq = complex(p.R, p.X + p.Xd_prime)
    if z_eq == 0:
        raise ValueError("singular admittance: R + j(X + Xd') is zero")
    Y_eq = 1.0 / z_eq
    G_eq, B_eq = Y_eq.real, Y_eq.imag

    omega_s = 2.0 * math.pi * p.f
    M = 2.0 * p.H / omega_s
    # Mechanical power balances the dispatched terminal power; the series
    # reactance Xd' carries no real power, so the origin is a fixed point of
    # the shifted system (k1 + k2 = 0 up to roundoff).
    P_m = p.P
    k1 = P_m - E**2 * G_eq
    c2 = E * p.V2 * G_eq
    c3 = E * p.V2 * B_eq
    k2 = c2 * math.cos(delta0) + c3 * math.sin(delta0)
    k3 = c3 * math.cos(delta0) - c2 * math.sin(delta0)

    derived = SmibDerived(
        theta1=theta1,
        E=E,
        delta0=delta0,
        omega_s=omega_s,
        M=M,
        G_eq=G_eq,
        B_eq=B_eq,
        k1=k1,
        k2=k2,
        k3=k3,
        c2=c2,
        c3=c3,
        P_m=P_m,
    )

    x1, x2 = Variable("x1"), Variable("x2")
    kv = {name: Variable(name) for name in ("k1", "k2", "k3", "D", "ws", "M")}
    rhs2 = (
        kv["k1"]
        + kv["k2"] * cos(x1)
        + kv["k3"] * sin(x1)
        - kv["D"] * x2 / kv["ws"]
    ) / kv["M"]
    system = OdeSystem(
        state_names=("x1", "x2"),
        rhs=(x2, rhs2),
        parameters={
            "k1": k1,
            "k2": k2,
            "k3": k3,
            "D": p.D,
            "ws": omega_s,
            "M": M,
        },
    )
    return system, derived


def smib_outputs(x, derived: SmibDerived):
    """Real and reactive electrical power at the internal node for shifted
    states.  ``x`` has shape (..., 2); returns (P_e, Q_e) with shape (...)."""
    x = np.asarray(x, dtype=np.float64)
    delta = x[..., 0] + derived.delta0
    cos_d, sin_d = np.cos(delta), np.sin(delta)
    d = derived
    p_e = d.E**2 * d.G_eq - d.c2 * cos_d - d.c3 * sin_d
    q_e = -(d.E**2) * d.B_eq + d.c3 * cos_d - d.c2 * sin_d
    if p_e.ndim == 0:
        return float(p_e), float(q_e)
    return p_e, q_e


def smib_output_jacobian(x, derived: SmibDerived) -> np.ndarray:
    """d(P_e, Q_e)/dx at a shifted state; shape (2, 2)."""
    delta = float(x[0]) + derived.delta0
    cos_d, sin_d = math.cos(delta), math.sin(delta)
    d = derived
    return np.array(
        [
            [d.c2 * sin_d - d.c3 * cos_d, 0.0],
            [-d.c3 * sin_d - d.c2 * cos_d, 0.0],
        ]
    )


# ---------------------------------------------------------------------------
# Linearization


def jacobian_eigs(system: OdeSystem, x_star):
    """Eigenvalues of the analytic Jacobian at a point, sorted by descending
    real part (conjugate pairs adjacent, positive imaginary first), plus
    (frequency Hz, damping ratio) for each complex pair."""
    x_star = np.asarray(x_star, dtype=np.float64)
    env = dict(system.parameters)
    env.update(zip(system.state_names, x_star.tolist()))
    n = system.dim
    jac = np.empty((n, n))
    for i, e in enumerate(system.rhs):
        for j, name in enumerate(system.state_names):
            jac[i, j] = evaluate(differentiate(e, name), env)
    eigs = np.linalg.eigvals(jac)
    order = sorted(
        range(n),
        key=lambda i: (-eigs[i].real, abs(eigs[i].imag), -np.sign(eigs[i].imag)),
    )
    eigs = eigs[order]
    modes = [
        (abs(lam.imag) / (2.0 * math.pi), -lam.real / abs(lam))
        for lam in eigs
        if lam.imag > 0
    ]
    return eigs, modes
