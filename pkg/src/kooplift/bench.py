"""Benchmark harness: wires lifting, EDMD, and the Kalman filter into the
SMIB experiments and writes the result tables as CSV.

Three experiments:

* spectrum  - fit every configured dictionary on the training lattice and
  compare principal eigenvalues against the linearization
  (spectrum_<dict>.csv per dictionary plus table4.csv).
* reconstruct - spectral prediction of an in-sample trajectory against the
  integrated truth (recon_<start>.csv).
* kkf       - filter the four strongly nonlinear test cases with every
  dictionary and tabulate the error statistics (kkf_case<i>_<dict>.csv per
  run plus table6.csv).

Everything is seeded; identical config and seed give byte-identical output
files.  Runs within a benchmark are independent (they could execute
concurrently) but results are always assembled in configuration order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import dynamics, edmd, kkf
from .dynamics import LatticeSpec, SmibParams, Trajectory, write_csv
from .polylift import (
    ObservableSet,
    lift,
    monomial_dictionary,
    observables_from_lift,
    rbf_dictionary,
)

DICTIONARY_NAMES = ("lie", "p2", "p3", "p4", "rbf6", "rbf19")


@dataclass(frozen=True)
class ExperimentConfig:
    """Benchmark configuration; defaults reproduce the training setup
    (45-point lattice, 5 ms sampling, 0.8 s records) exactly."""

    smib: SmibParams = SmibParams()
    lattice: LatticeSpec = LatticeSpec(((-0.50, 0.25, 0.50), (-1.00, 0.25, 1.00)))
    dt: float = 0.005
    horizon: float = 0.8
    substeps: int = 5
    dictionaries: tuple[str, ...] = DICTIONARY_NAMES
    rbf_seed: int = 7
    sv_rel_tol: float = 1e-10
    sigma_meas: float = 5e-2
    q_w: float = 1e-1
    r_v: float = 2.5e-3
    p0_scale: float = 10.0
    cases: tuple[tuple[float, float], ...] = (
        (2.1, 2.1),
        (-1.0, 12.0),
        (1.5, -15.0),
        (-1.7, -1.7),
    )
    duration: float = 10.0
    master_seed: int = 0
    out_dir: str = "out"

    @property
    def train_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def noise(self) -> kkf.NoiseSpec:
        return kkf.NoiseSpec(
            q_w=self.q_w, r_v=self.r_v, sigma_meas=self.sigma_meas
        )


@dataclass(frozen=True)
class ResultTable:
    """Named columns and rows, serialized losslessly to CSV."""

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_csv(self, path) -> None:
        write_csv(path, self.columns, self.rows)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


# ---------------------------------------------------------------------------
# Config file parsing (flat key = value text)

_CONFIG_KEYS = (
    "smib_R smib_X smib_V1 smib_V2 smib_P smib_Xd_prime smib_D smib_H smib_f "
    "lattice dt horizon substeps dictionaries rbf_seed sv_rel_tol sigma_meas "
    "q_w r_v p0_scale cases duration master_seed out_dir"
).split()


def parse_config(text: str) -> ExperimentConfig:
    """Parse 'key = value' lines ('#' starts a comment) into a config.

    Keys mirror ExperimentConfig: scalars verbatim; ``lattice`` as
    comma-separated start:step:stop axes; ``dictionaries`` comma-separated;
    ``cases`` as semicolon-separated comma pairs.
    """
    cfg = ExperimentConfig()
    smib_kwargs: dict = {}
    updates: dict = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key or not value:
            raise ValueError(f"expected 'key = value', got {raw!r}")
        if key not in _CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        if key.startswith("smib_"):
            smib_kwargs[key[len("smib_") :]] = float(value)
        elif key == "lattice":
            axes = []
            for axis in value.split(","):
                start, step, stop = axis.split(":")
                axes.append((float(start), float(step), float(stop)))
            updates["lattice"] = LatticeSpec(tuple(axes))
        elif key == "dictionaries":
            updates["dictionaries"] = tuple(
                v.strip() for v in value.split(",") if v.strip()
            )
        elif key == "cases":
            cases = []
            for pair in value.split(";"):
                a, b = pair.split(",")
                cases.append((float(a), float(b)))
            updates["cases"] = tuple(cases)
        elif key in ("substeps", "rbf_seed", "master_seed"):
            updates[key] = int(value)
        elif key == "out_dir":
            updates[key] = value
        else:
            updates[key] = float(value)
    if smib_kwargs:
        updates["smib"] = replace(cfg.smib, **smib_kwargs)
    return replace(cfg, **updates)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# Shared pipeline pieces


def build_dictionary(name: str, cfg: ExperimentConfig, system) -> ObservableSet:
    """Instantiate a dictionary by benchmark name (lie, pN, rbfN)."""
    state_names = system.state_names
    n = len(state_names)
    if name == "lie":
        return observables_from_lift(lift(system))
    if name.startswith("p") and name[1:].isdigit():
        return monomial_dictionary(n, int(name[1:]), state_names)
    if name.startswith("rbf") and name[3:].isdigit():
        total = int(name[3:])
        rng = np.random.default_rng(cfg.rbf_seed)
        lows = [ax[0] for ax in cfg.lattice.axes]
        highs = [ax[2] for ax in cfg.lattice.axes]
        centers = rng.uniform(lows, highs, size=(total - n, n))
        return rbf_dictionary(n, total, centers, state_names)
    raise ValueError(f"unknown dictionary name {name!r}")


@dataclass(frozen=True)
class TrainingRun:
    """Everything shared by the benchmarks for one config."""

    cfg: ExperimentConfig
    system: object
    derived: dynamics.SmibDerived
    trajectories: tuple[Trajectory, ...]
    snapshots: edmd.SnapshotPair
    reference_eig: complex
    reference_freq: float
    reference_damping: float


def prepare_training(cfg: ExperimentConfig) -> TrainingRun:
    """Build the model, sample the lattice trajectories, and assemble the
    snapshot matrices."""
    system, derived = dynamics.smib_build(cfg.smib)
    points = dynamics.sample_lattice(cfg.lattice)
    trajectories = dynamics.integrate_batch(
        system, points, cfg.dt, cfg.train_steps, cfg.substeps
    )
    snapshots = edmd.build_snapshots(trajectories)
    eigs, modes = dynamics.jacobian_eigs(system, np.zeros(system.dim))
    freq, damping = modes[0]
    return TrainingRun(
        cfg=cfg,
        system=system,
        derived=derived,
        trajectories=tuple(trajectories),
        snapshots=snapshots,
        reference_eig=complex(eigs[0]),
        reference_freq=freq,
        reference_damping=damping,
    )


def fit_dictionary(
    run: TrainingRun, name: str
) -> edmd.KoopmanDecomposition:
    obs = build_dictionary(name, run.cfg, run.system)
    dm = edmd.apply_dictionary(obs, run.snapshots)
    K = edmd.fit(dm, run.cfg.sv_rel_tol)
    return edmd.decompose(K, obs, run.cfg.dt)


# ---------------------------------------------------------------------------
# Experiments


def run_spectrum_bench(cfg: ExperimentConfig, run: TrainingRun | None = None):
    """Fit every configured dictionary, write spectrum_<dict>.csv files, and
    return the dimension/accuracy table (also written as table4.csv)."""
    run = run or prepare_training(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    lam_ref = run.reference_eig
    rows = []
    for name in cfg.dictionaries:
        dec = fit_dictionary(run, name)
        pair, idx = edmd.principal_eigenpair(dec, lam_ref)
        spec_rows = []
        for i, (lc, ld) in enumerate(zip(dec.lambda_c, dec.lambda_d)):
            spec_rows.append(
                (
                    lc.real,
                    lc.imag,
                    ld.real,
                    ld.imag,
                    abs(lc.imag) / (2 * math.pi),
                    100.0 * (-lc.real / abs(lc)) if abs(lc) > 0 else 0.0,
                    int(i in (idx, idx + 1)),  # pair members are adjacent
                )
            )
        write_csv(
            os.path.join(cfg.out_dir, f"spectrum_{name}.csv"),
            ("re_c", "im_c", "re_d", "im_d", "freq_hz", "damping_pct",
             "is_principal"),
            spec_rows,
        )
        lam = pair[0]
        damping = -lam.real / abs(lam)
        rows.append(
            (
                name,
                dec.q,
                100.0 * abs(lam.real - lam_ref.real) / abs(lam_ref.real),
                100.0 * abs(lam.imag - lam_ref.imag) / abs(lam_ref.imag),
                100.0 * abs(damping - run.reference_damping)
                / run.reference_damping,
                "seed-dependent" if name.startswith("rbf") else "pinned",
            )
        )
    table = ResultTable(
        columns=(
            "dictionary",
            "dimension",
            "err_real_pct",
            "err_imag_pct",
            "err_damping_pct",
            "provenance",
        ),
        rows=tuple(rows),
    )
    table.to_csv(os.path.join(cfg.out_dir, "table4.csv"))
    return table


def run_reconstruction(
    cfg: ExperimentConfig, start, run: TrainingRun | None = None
):
    """Predict an in-sample trajectory with every dictionary and write it
    next to the integrated truth (recon_<start>.csv)."""
    run = run or prepare_training(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    steps = cfg.train_steps
    truth = dynamics.integrate_rk4(
        run.system, start, cfg.dt, steps, cfg.substeps
    )
    columns = ["t"] + [f"{s}_true" for s in run.system.state_names]
    blocks = [truth.times[:, None], truth.states]
    for name in cfg.dictionaries:
        dec = fit_dictionary(run, name)
        pred = edmd.predict(dec, start, steps)
        columns += [f"{s}_{name}" for s in run.system.state_names]
        blocks.append(pred.states)
    path = os.path.join(
        cfg.out_dir, f"recon_{start[0]:g}_{start[1]:g}.csv"
    )
    write_csv(path, columns, np.hstack(blocks))
    return path


def kkf_seed(master_seed: int, case_index: int, dict_index: int):
    """Deterministic per-run seed; runs may execute in any order."""
    return np.random.SeedSequence((master_seed, case_index, dict_index))


def run_kkf_bench(
    cfg: ExperimentConfig,
    run: TrainingRun | None = None,
    write_runs: bool = True,
):
    """Filter every case with every dictionary and tabulate the four error
    statistics per case; the per-row minimum is named in the 'best' column.
    Also written as table6.csv."""
    run = run or prepare_training(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    noise = cfg.noise()
    steps = int(round(cfg.duration / cfg.dt))
    decs = {name: fit_dictionary(run, name) for name in cfg.dictionaries}
    stats: dict[tuple[int, str], dict] = {}
    for ci, case in enumerate(cfg.cases):
        truth = dynamics.integrate_rk4(
            run.system, case, cfg.dt, steps, cfg.substeps
        )
        for di, name in enumerate(cfg.dictionaries):
            dec = decs[name]
            meas = kkf.build_measurement(dec, run.derived)
            result = kkf.kkf_run(
                case,
                cfg.duration,
                run.system,
                dec,
                meas,
                noise,
                seed=kkf_seed(cfg.master_seed, ci, di),
                P0_scale=cfg.p0_scale,
                truth=truth,
            )
            stats[(ci, name)] = result.stats
            if write_runs:
                write_csv(
                    os.path.join(cfg.out_dir, f"kkf_case{ci + 1}_{name}.csv"),
                    (
                        "t",
                        "delta_true",
                        "omega_true",
                        "delta_hat",
                        "omega_hat",
                        "eps_delta",
                        "eps_omega",
                        "P_meas",
                        "Q_meas",
                    ),
                    np.column_stack(
                        [
                            result.truth.times,
                            result.truth.states,
                            result.estimate.states,
                            result.eps_delta,
                            result.eps_omega,
                            result.measurements,
                        ]
                    ),
                )

    stat_names = (
        "max_eps_delta",
        "max_eps_omega",
        "sum_eps_delta",
        "sum_eps_omega",
    )
    rows = []
    for ci in range(len(cfg.cases)):
        for stat in stat_names:
            values = [stats[(ci, name)][stat] for name in cfg.dictionaries]
            best = cfg.dictionaries[int(np.argmin(values))]
            rows.append(
                (ci + 1, stat, *values, best, "qualitative")
            )
    table = ResultTable(
        columns=("case", "statistic", *cfg.dictionaries, "best", "provenance"),
        rows=tuple(rows),
    )
    table.to_csv(os.path.join(cfg.out_dir, "table6.csv"))
    return table
