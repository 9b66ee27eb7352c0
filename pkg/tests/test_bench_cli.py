import filecmp
import os
from dataclasses import replace

import numpy as np
import pytest

from kooplift import bench, cli
from kooplift.bench import ExperimentConfig, parse_config
from kooplift.dynamics import LatticeSpec, SmibParams


def tiny_config(out_dir, **overrides) -> ExperimentConfig:
    """A fast configuration for smoke and determinism tests."""
    base = ExperimentConfig(
        lattice=LatticeSpec(((-0.5, 0.5, 0.5), (-1.0, 0.5, 1.0))),
        horizon=0.2,
        dictionaries=("lie", "p2"),
        cases=((2.1, 2.1),),
        duration=0.5,
        out_dir=str(out_dir),
    )
    return replace(base, **overrides)


class TestConfigDefaults:
    def test_network_data(self):
        smib = ExperimentConfig().smib
        assert smib == SmibParams(
            R=0.05, X=0.30, V1=1.05, V2=1.00, P=0.80,
            Xd_prime=0.20, D=10.0, H=5.0, f=60.0,
        )

    def test_training_setup(self):
        cfg = ExperimentConfig()
        assert cfg.lattice.axes == ((-0.50, 0.25, 0.50), (-1.00, 0.25, 1.00))
        assert cfg.dt == 0.005
        assert cfg.horizon == 0.8
        assert cfg.train_steps == 160
        assert cfg.dictionaries == ("lie", "p2", "p3", "p4", "rbf6", "rbf19")

    def test_filter_cases(self):
        cfg = ExperimentConfig()
        assert cfg.cases == ((2.1, 2.1), (-1.0, 12.0), (1.5, -15.0), (-1.7, -1.7))


class TestParseConfig:
    def test_full_round_trip(self):
        text = """
            # comment
            smib_R = 0.04
            lattice = -1:0.5:1, 0:1:2
            dt = 0.01
            dictionaries = lie, p3
            cases = 1.0,2.0; -3.0,4.0
            master_seed = 42
            out_dir = results
        """
        cfg = parse_config(text)
        assert cfg.smib.R == 0.04
        assert cfg.lattice.axes == ((-1.0, 0.5, 1.0), (0.0, 1.0, 2.0))
        assert cfg.dt == 0.01
        assert cfg.dictionaries == ("lie", "p3")
        assert cfg.cases == ((1.0, 2.0), (-3.0, 4.0))
        assert cfg.master_seed == 42
        assert cfg.out_dir == "results"

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("bogus = 1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="key = value"):
            parse_config("dt 0.01\n")


class TestSpectrumBench:
    def test_dimensions_and_files(self, default_cfg, training, tmp_path):
        cfg = replace(default_cfg, out_dir=str(tmp_path))
        table = bench.run_spectrum_bench(cfg, training)
        assert table.column("dimension") == [6, 5, 9, 14, 6, 19]
        for name in cfg.dictionaries:
            assert (tmp_path / f"spectrum_{name}.csv").exists()
        assert (tmp_path / "table4.csv").exists()
        header = (tmp_path / "spectrum_lie.csv").read_text().splitlines()[0]
        assert header == "re_c,im_c,re_d,im_d,freq_hz,damping_pct,is_principal"

    def test_principal_flag_marks_one_pair(self, default_cfg, training, tmp_path):
        cfg = replace(default_cfg, out_dir=str(tmp_path), dictionaries=("p2",))
        bench.run_spectrum_bench(cfg, training)
        rows = (tmp_path / "spectrum_p2.csv").read_text().splitlines()[1:]
        flags = [int(r.split(",")[-1]) for r in rows]
        assert sum(flags) == 2

    def test_provenance_column(self, default_cfg, training, tmp_path):
        cfg = replace(default_cfg, out_dir=str(tmp_path))
        table = bench.run_spectrum_bench(cfg, training)
        prov = dict(zip(table.column("dictionary"), table.column("provenance")))
        assert prov["lie"] == "pinned"
        assert prov["rbf19"] == "seed-dependent"


class TestKkfBench:
    def test_table_structure(self, tmp_path):
        cfg = tiny_config(tmp_path)
        table = bench.run_kkf_bench(cfg)
        assert table.columns[:2] == ("case", "statistic")
        assert "best" in table.columns
        assert len(table.rows) == 4  # one case, four statistics
        assert (tmp_path / "table6.csv").exists()
        assert (tmp_path / "kkf_case1_lie.csv").exists()
        header = (tmp_path / "kkf_case1_lie.csv").read_text().splitlines()[0]
        assert header == (
            "t,delta_true,omega_true,delta_hat,omega_hat,"
            "eps_delta,eps_omega,P_meas,Q_meas"
        )

    def test_best_marks_row_minimum(self, tmp_path):
        cfg = tiny_config(tmp_path)
        table = bench.run_kkf_bench(cfg)
        for row in table.rows:
            values = dict(zip(table.columns, row))
            best = values["best"]
            assert values[best] == min(values[d] for d in cfg.dictionaries)


class TestReconstruction:
    def test_prediction_from_fixed_point(self, training, decompositions):
        from kooplift import edmd

        # Monomial entries all vanish at the origin, so the prediction is
        # identically zero; the lift dictionary has cos(x1) = 1 there and
        # the fitted K does not preserve that point exactly (bias measured
        # at 0.052 over the 0.8 s horizon).
        pred = edmd.predict(decompositions["p2"], [0.0, 0.0], 160)
        assert np.abs(pred.states).max() == 0.0
        pred = edmd.predict(decompositions["lie"], [0.0, 0.0], 160)
        assert np.abs(pred.states).max() <= 0.06

    def test_writes_truth_and_predictions(self, tmp_path):
        cfg = tiny_config(tmp_path, horizon=0.4)
        path = bench.run_reconstruction(cfg, np.array([-0.5, -0.75]))
        assert os.path.basename(path) == "recon_-0.5_-0.75.csv"
        data = np.genfromtxt(path, delimiter=",", names=True)
        assert len(data) == cfg.train_steps + 1
        assert set(data.dtype.names) >= {
            "t", "x1_true", "x2_true", "x1_lie", "x2_lie", "x1_p2", "x2_p2",
        }


class TestDeterminism:
    def test_byte_identical_outputs(self, tmp_path):
        dirs = []
        for run in ("a", "b"):
            cfg = tiny_config(tmp_path / run)
            bench.run_spectrum_bench(cfg)
            bench.run_kkf_bench(cfg)
            dirs.append(tmp_path / run)
        names = sorted(os.listdir(dirs[0]))
        assert names == sorted(os.listdir(dirs[1]))
        for name in names:
            assert filecmp.cmp(dirs[0] / name, dirs[1] / name, shallow=False), name


class TestCli:
    def test_no_arguments_is_usage_error(self, capsys):
        assert cli.main([]) == 1

    def test_unknown_option(self):
        assert cli.main(["--bogus"]) == 1

    def test_lift_prints_aux_and_dictionary(self, capsys):
        assert cli.main(["lift", "systems/smib.ode"]) == 0
        out = capsys.readouterr().out
        assert "z1 = sin(x1)" in out
        assert "z1' = x2*z2" in out
        assert "g5 = x2*sin(x1)" in out

    def test_lift_missing_file(self, capsys):
        assert cli.main(["lift", "no/such/file.ode"]) == 1

    def test_simulate_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "traj.csv"
        code = cli.main(
            ["simulate", "--x0", "0.3,0.0", "--steps", "10", "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "t,x1,x2"
        assert len(lines) == 12

    def test_simulate_divergence_exits_2(self, tmp_path):
        bad = tmp_path / "bad.ode"
        bad.write_text("x' = x^2\n")
        code = cli.main(
            ["simulate", "--system", str(bad), "--x0", "1.0",
             "--dt", "0.5", "--steps", "40", "--substeps", "1"]
        )
        assert code == 2

    def test_edmd_then_predict(self, tmp_path, capsys):
        config = tmp_path / "cfg.txt"
        config.write_text("horizon = 0.2\nlattice = -0.5:0.5:0.5, -1:0.5:1\n")
        code = cli.main(
            ["--config", str(config), "--out-dir", str(tmp_path), "edmd",
             "--dict", "lie"]
        )
        assert code == 0
        model = tmp_path / "model_lie.json"
        assert model.exists()
        out_csv = tmp_path / "pred.csv"
        code = cli.main(
            ["predict", "--model", str(model), "--x0", "0.2,-0.3",
             "--steps", "20", "--out", str(out_csv)]
        )
        assert code == 0
        assert len(out_csv.read_text().splitlines()) == 22

    def test_kkf_case(self, tmp_path, capsys):
        config = tmp_path / "cfg.txt"
        config.write_text(
            "horizon = 0.2\nlattice = -0.5:0.5:0.5, -1:0.5:1\nduration = 0.5\n"
        )
        code = cli.main(
            ["--config", str(config), "--out-dir", str(tmp_path), "kkf",
             "--case", "1", "--dict", "lie"]
        )
        assert code == 0
        assert (tmp_path / "kkf_case1_lie.csv").exists()
        assert "sum_eps_delta" in capsys.readouterr().out

    def test_kkf_case_out_of_range(self, tmp_path):
        assert cli.main(["kkf", "--case", "9"]) == 1

    def test_bench_reconstruct(self, tmp_path, capsys):
        config = tmp_path / "cfg.txt"
        config.write_text(
            "horizon = 0.2\nlattice = -0.5:0.5:0.5, -1:0.5:1\n"
            "dictionaries = lie\n"
        )
        code = cli.main(
            ["--config", str(config), "--out-dir", str(tmp_path),
             "bench", "reconstruct", "--start=-0.25,0.5"]
        )
        assert code == 0
        assert (tmp_path / "recon_-0.25_0.5.csv").exists()

    def test_format_option_validated(self):
        assert cli.main(["--format", "xml", "lift", "systems/smib.ode"]) == 1
