"""Extended dynamic mode decomposition on observable dictionaries.

Snapshot pairs are pushed through a dictionary g, the finite Koopman matrix
K is the least-squares map G+ = K G (via SVD pseudoinverse), and its
eigendecomposition yields discrete/continuous eigenvalues, eigenfunction
coefficients (left eigenvectors), and Koopman modes.  Because every
dictionary here starts with the identity observables, the state projection
is simply the leading block and the modes are the first n rows of the right
eigenvectors.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory
from .polylift import ObservableSet


class FitError(RuntimeError):
    """Least-squares fit impossible (degenerate snapshot data)."""


class DecompositionError(RuntimeError):
    """K is defective beyond tolerance; no eigenbasis is returned."""


@dataclass(frozen=True)
class SnapshotPair:
    """State snapshot matrices: column k of X_plus is the dt-successor of
    column k of X."""

    X: np.ndarray
    X_plus: np.ndarray
    dt: float | None = None

    def __post_init__(self):
        if self.X.shape != self.X_plus.shape:
            raise ValueError("X and X_plus must have equal shapes")

    @property
    def m(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class DictionaryMatrices:
    """Dictionary evaluations of a snapshot pair, shape (q, m) each."""

    G: np.ndarray
    G_plus: np.ndarray


def build_snapshots(trajectories) -> SnapshotPair:
    """Concatenate per-trajectory shifted pairs.

    The last state of one trajectory is never paired with the first of the
    next; m = sum(len_i - 1).
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("no trajectories given")
    dt = trajectories[0].dt
    n = trajectories[0].states.shape[1]
    xs, xps = [], []
    for traj in trajectories:
        if traj.dt != dt:
            raise ValueError(f"mismatched dt: {traj.dt} vs {dt}")
        if traj.states.shape[1] != n:
            raise ValueError(
                f"mismatched dimension: {traj.states.shape[1]} vs {n}"
            )
        xs.append(traj.states[:-1].T)
        xps.append(traj.states[1:].T)
    return SnapshotPair(X=np.hstack(xs), X_plus=np.hstack(xps), dt=dt)


def apply_dictionary(obs: ObservableSet, snaps: SnapshotPair) -> DictionaryMatrices:
    """Evaluate the dictionary columnwise on both snapshot matrices."""
    if snaps.X.shape[0] != obs.n:
        raise ValueError(
            f"snapshot dimension {snaps.X.shape[0]} does not match "
            f"dictionary dimension {obs.n}"
        )
    G = obs.evaluate_batch(snaps.X)
    G_plus = obs.evaluate_batch(snaps.X_plus)
    for name, mat in (("X", G), ("X_plus", G_plus)):
        if not np.isfinite(mat).all():
            i, k = np.argwhere(~np.isfinite(mat))[0]
            raise ValueError(
                f"observable {i} is undefined at {name} column {k}"
            )
    return DictionaryMatrices(G=G, G_plus=G_plus)


def fit(dm: DictionaryMatrices, sv_rel_tol: float = 1e-10) -> np.ndarray:
    """Least-squares Koopman matrix K = G_plus pinv(G).

    Singular values below sv_rel_tol times the largest are truncated; on
    rank-deficient data this gives the minimum-norm solution.
    """
    G, G_plus = dm.G, dm.G_plus
    q, m = G.shape
    if m < q:
        warnings.warn(
            f"only {m} snapshot columns for {q} observables; "
            "the fit is underdetermined",
            stacklevel=2,
        )
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    keep = s > sv_rel_tol * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    if not keep.any():
        raise FitError("degenerate snapshot data: all singular values truncated")
    pinv_G = (Vt[keep].T / s[keep]) @ U[:, keep].T
    return G_plus @ pinv_G


@dataclass(frozen=True)
class KoopmanDecomposition:
    """Eigendecomposition of a finite Koopman matrix.

    Ordered by descending real part of the continuous-time eigenvalues,
    ties by ascending imaginary magnitude; conjugate pairs are adjacent with
    the positive-imaginary member first.  Right eigenvectors (columns of Rv)
    have unit norm and L = Rv^-1, so eigenfunction values are phi(x) = L g(x)
    and the modes U = P L^-1 are the leading n rows of Rv.
    """

    K: np.ndarray
    dt: float
    lambda_d: np.ndarray
    lambda_c: np.ndarray
    Rv: np.ndarray
    L: np.ndarray
    U: np.ndarray
    dictionary: ObservableSet

    @property
    def q(self) -> int:
        return self.K.shape[0]

    @property
    def n(self) -> int:
        return self.dictionary.n


def decompose(
    K: np.ndarray, dictionary: ObservableSet, dt: float
) -> KoopmanDecomposition:
    """Eigendecompose K and package the Koopman tuple.

    Raises DecompositionError if the eigenvector basis is numerically
    singular (defective K); there is no fallback.
    """
    K = np.asarray(K, dtype=np.float64)
    q = K.shape[0]
    if K.shape != (q, q):
        raise ValueError("K must be square")
    if dictionary.q != q:
        raise ValueError(
            f"dictionary size {dictionary.q} does not match K ({q}x{q})"
        )
    lam_d, Rv = np.linalg.eig(K)
    Rv = Rv / np.linalg.norm(Rv, axis=0, keepdims=True)
    # A defective K shows up as an ill-conditioned eigenvector matrix.
    if np.linalg.cond(Rv) > 1e12:
        raise DecompositionError(
            "eigenvector matrix is numerically singular; K is defective "
            "beyond tolerance"
        )
    lam_c = np.log(lam_d.astype(complex)) / dt

    order = sorted(
        range(q),
        key=lambda i: (
            -lam_c[i].real,
            abs(lam_c[i].imag),
            -np.sign(lam_c[i].imag),
        ),
    )
    lam_d = lam_d[order]
    lam_c = lam_c[order]
    Rv = Rv[:, order]
    L = np.linalg.inv(Rv)

    resid = np.linalg.norm(L @ Rv - np.eye(q), ord="fro")
    if resid > 1e-8 * q:
        raise DecompositionError(
            f"biorthonormality residual {resid:.3e} exceeds tolerance"
        )
    return KoopmanDecomposition(
        K=K,
        dt=float(dt),
        lambda_d=lam_d,
        lambda_c=lam_c,
        Rv=Rv,
        L=L,
        U=Rv[: dictionary.n, :].copy(),
        dictionary=dictionary,
    )


def eigenfunctions(dec: KoopmanDecomposition, x) -> np.ndarray:
    """Eigenfunction values phi(x) = L g(x) at a state."""
    return dec.L @ dec.dictionary.evaluate_point(x)


def predict(dec: KoopmanDecomposition, x0, steps: int) -> Trajectory:
    """Spectral prediction x_k = Re{ U diag(lambda_d^k) phi(x0) }.

    The discarded imaginary magnitude is reported in
    ``meta['max_imag_residual']``; it stays at roundoff level for real data
    because eigenvalues come in conjugate pairs.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    phi0 = eigenfunctions(dec, x0)
    powers = dec.lambda_d[None, :] ** np.arange(steps + 1)[:, None]
    states_c = (powers * phi0[None, :]) @ dec.U.T
    max_imag = float(np.abs(states_c.imag).max())
    return Trajectory(
        dt=dec.dt,
        states=np.ascontiguousarray(states_c.real),
        state_names=dec.dictionary.state_names,
        meta={"max_imag_residual": max_imag},
    )


def principal_eigenpair(
    dec: KoopmanDecomposition, reference: complex
) -> tuple[np.ndarray, int]:
    """The conjugate pair of continuous-time eigenvalues whose upper-half
    member is closest to the reference; returns (pair, index of the
    positive-imaginary member)."""
    upper = [i for i in range(dec.q) if dec.lambda_c[i].imag > 0]
    if not upper:
        raise ValueError("decomposition has no complex-conjugate pairs")
    best = min(upper, key=lambda i: abs(dec.lambda_c[i] - reference))
    lam = dec.lambda_c[best]
    return np.array([lam, lam.conjugate()]), best


# ---------------------------------------------------------------------------
# Serialization


def _complex_out(a: np.ndarray) -> dict:
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def _complex_in(d: dict) -> np.ndarray:
    return np.asarray(d["re"]) + 1j * np.asarray(d["im"])


def save_decomposition(dec: KoopmanDecomposition, path) -> None:
    """Write the Koopman tuple and the dictionary description as JSON."""
    obs = dec.dictionary
    doc = {
        "dt": dec.dt,
        "K": dec.K.tolist(),
        "lambda_d": _complex_out(dec.lambda_d),
        "lambda_c": _complex_out(dec.lambda_c),
        "Rv": _complex_out(dec.Rv),
        "L": _complex_out(dec.L),
        "U": _complex_out(dec.U),
        "dictionary": {
            "kind": obs.kind,
            "state_names": list(obs.state_names),
            "entries": [str(e) for e in obs.entries],
            "degree": obs.degree,
            "centers": [list(c) for c in obs.centers] if obs.centers else None,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_decomposition(path) -> KoopmanDecomposition:
    from .expr import parse

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    d = doc["dictionary"]
    obs = ObservableSet(
        state_names=tuple(d["state_names"]),
        entries=tuple(parse(s) for s in d["entries"]),
        kind=d["kind"],
        degree=d["degree"],
        centers=tuple(tuple(c) for c in d["centers"]) if d["centers"] else None,
    )
    return KoopmanDecomposition(
        K=np.asarray(doc["K"], dtype=np.float64),
        dt=float(doc["dt"]),
        lambda_d=_complex_in(doc["lambda_d"]),
        lambda_c=_complex_in(doc["lambda_c"]),
        Rv=_complex_in(doc["Rv"]),
        L=_complex_in(doc["L"]),
        U=_complex_in(doc["U"]),
        dictionary=obs,
    )
