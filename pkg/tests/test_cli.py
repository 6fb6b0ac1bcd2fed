import json

import numpy as np
import pytest

import oracles
from nrdf import cli, config

BASE_CFG = """\
[run]
horizon = {n}
epsilon = 1e-6
trace_every = 1
[source]
alpha = 0.4
[grid]
levels = {levels}
[lagrange]
s = {s}
[output]
dir = "out"
"""


def write_cfg(tmp_path, n=3, levels=3, s=-2.0, extra=""):
    path = tmp_path / "cfg.toml"
    path.write_text(BASE_CFG.format(n=n, levels=levels, s=s) + extra, encoding="utf-8")
    return path


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:] if not ln.startswith("#")]
    return header, rows


class TestConfig:
    def test_round_trip_idempotent(self, tmp_path):
        cfg = config.load(write_cfg(tmp_path))
        once = config.to_toml(cfg)
        twice = config.to_toml(config.from_toml(once))
        assert once == twice

    def test_rejects_positive_price(self, tmp_path):
        with pytest.raises(Exception):
            config.load(write_cfg(tmp_path, s=1.0))

    def test_seeded_alphas_are_reproducible(self):
        text = BASE_CFG.format(n=5, levels=3, s=-2.0).replace(
            "alpha = 0.4", "alpha_seed = 7"
        )
        a = config.from_toml(text).source()
        b = config.from_toml(text).source()
        assert all(np.array_equal(x, y) for x, y in zip(a.kernels, b.kernels))

    def test_explicit_source_and_distortion(self):
        text = """
[run]
horizon = 1
[source]
type = "explicit"
initial = [0.6, 0.4]
kernels = [[[0.9, 0.2], [0.1, 0.8]]]
[distortion]
type = "explicit"
matrices = [[[0.0, 2.0], [1.0, 0.0]]]
[grid]
levels = 2
[lagrange]
s = -1.0
"""
        cfg = config.from_toml(text)
        assert cfg.source().kernel(1)[0, 0] == 0.9
        assert cfg.distortion().rho(0)[0, 1] == 2.0


class TestSolveCommand:
    def test_single_stage_matches_closed_form(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, n=0, levels=1)
        code = cli.main(["solve", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert code == 0
        summary = json.loads((tmp_path / "out" / "trajectory.json").read_text())
        r_cf, d_cf = oracles.binary_rdf_point(-2.0)
        assert summary["totals"]["rate_avg_nats"] == pytest.approx(r_cf, abs=1e-4)
        assert summary["totals"]["rate_avg_bits"] == pytest.approx(r_cf / np.log(2), abs=1e-4)
        assert summary["totals"]["distortion_avg"] == pytest.approx(d_cf, abs=1e-5)

    def test_artifacts_and_headers(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
        header, rows = read_csv(out / "per_stage.csv")
        assert header == [
            "t", "rate_nats", "rate_bits", "distortion", "grid_index",
            "belief_x0_y0", "belief_x1_y0", "belief_x0_y1", "belief_x1_y1",
            "iterations", "final_gap",
        ]
        assert len(rows) == 4
        header, rows = read_csv(out / "convergence.csv")
        assert header == ["t", "branch", "iteration", "objective", "gap"]
        assert (out / "tables.ckpt").exists()

    def test_zero_price_zero_rate_column(self, tmp_path):
        cfg = write_cfg(tmp_path, s=0.0)
        out = tmp_path / "out"
        assert cli.main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
        _, rows = read_csv(out / "per_stage.csv")
        assert all(abs(float(r[1])) <= 1e-9 for r in rows)

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(["solve", "--config", str(cfg), "--out", str(out1)]) == 0
        assert cli.main(["solve", "--config", str(cfg), "--out", str(out2)]) == 0
        for name in ("per_stage.csv", "convergence.csv", "trajectory.json", "tables.ckpt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_overrides_change_run(self, tmp_path):
        cfg = write_cfg(tmp_path, n=3)
        out = tmp_path / "out"
        assert cli.main(["solve", "--config", str(cfg), "--out", str(out), "--n", "1"]) == 0
        _, rows = read_csv(out / "per_stage.csv")
        assert len(rows) == 2

    def test_time_varying_source_varies_rate(self, tmp_path):
        cfg = tmp_path / "tv.toml"
        cfg.write_text(
            BASE_CFG.format(n=6, levels=4, s=-2.0).replace(
                "alpha = 0.4", "alpha_seed = 11"
            ),
            encoding="utf-8",
        )
        out = tmp_path / "out"
        assert cli.main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
        _, rows = read_csv(out / "per_stage.csv")
        rates = [float(r[1]) for r in rows[1:]]
        assert max(rates) - min(rates) > 1e-4


class TestForwardBackwardCommands:
    def test_backward_then_forward(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["backward", "--config", str(cfg), "--out", str(out)]) == 0
        assert cli.main(["forward", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "trajectory.json").exists()

    def test_forward_without_checkpoint_is_io_error(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert cli.main(["forward", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 3

    def test_corrupt_checkpoint_is_io_error(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["backward", "--config", str(cfg), "--out", str(out)]) == 0
        raw = bytearray((out / "tables.ckpt").read_bytes())
        raw[-1] ^= 0xFF
        (out / "tables.ckpt").write_bytes(bytes(raw))
        assert cli.main(["forward", "--config", str(cfg), "--out", str(out)]) == 3

    def test_bad_config_is_validation_error(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[run]\nhorizon = -3\n", encoding="utf-8")
        assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 1


class TestSweepCommand:
    def test_zero_price_sweep_row(self, tmp_path):
        cfg = write_cfg(tmp_path, n=2, extra="[sweep]\ns_values = [0.0]\n")
        out = tmp_path / "out"
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        header, rows = read_csv(out / "sweep.csv")
        assert header == ["s", "avg_distortion", "avg_rate_nats", "avg_rate_bits", "status"]
        assert float(rows[0][1]) == pytest.approx(0.5, abs=1e-9)
        assert float(rows[0][2]) == pytest.approx(0.0, abs=1e-9)

    def test_duplicate_prices_give_identical_rows(self, tmp_path):
        cfg = write_cfg(tmp_path, n=2, extra="[sweep]\ns_values = [-1.0, -1.0]\n")
        out = tmp_path / "out"
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        _, rows = read_csv(out / "sweep.csv")
        assert rows[0][1:] == rows[1][1:]

    def test_memoryless_sweep_matches_closed_form(self, tmp_path):
        cfg = tmp_path / "m.toml"
        cfg.write_text(
            """
[run]
horizon = 3
[source]
type = "explicit"
initial = [0.5, 0.5]
kernels = [[[0.5,0.5],[0.5,0.5]], [[0.5,0.5],[0.5,0.5]], [[0.5,0.5],[0.5,0.5]]]
[grid]
levels = 4
[lagrange]
s = -1.0
[sweep]
s_values = [-0.5, -1.0, -2.0, -4.0]
""",
            encoding="utf-8",
        )
        out = tmp_path / "out"
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        _, rows = read_csv(out / "sweep.csv")
        got = {float(r[0]): (float(r[1]), float(r[2])) for r in rows}
        for s_val, (d, r) in got.items():
            r_cf, d_cf = oracles.binary_rdf_point(s_val)
            assert d == pytest.approx(d_cf, abs=1e-3)
            assert r == pytest.approx(r_cf, abs=1e-3)
        trailer = (out / "sweep.csv").read_text().strip().splitlines()[-1]
        assert trailer == "# rate_nonincreasing_in_distortion=true"


class TestBenchCommand:
    def test_bench_rows_and_determinism(self, tmp_path):
        cfg = write_cfg(tmp_path, n=2, extra="[bench]\nworkers = [1, 2]\n")
        out = tmp_path / "out"
        assert cli.main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
        header, rows = read_csv(out / "bench.csv")
        assert header == ["workers", "wall_seconds", "cells", "cells_per_sec", "checksum"]
        assert len(rows) == 2
        assert rows[0][4] == rows[1][4]  # identical table checksums
        assert rows[0][2] == rows[1][2]


class TestOracleCommand:
    def test_uniform_binary(self, capsys):
        assert cli.main(["oracle", "--pred", "0.5,0.5", "--s", "-2"]) == 0
        out = capsys.readouterr().out
        r_cf, d_cf = oracles.binary_rdf_point(-2.0)
        assert f"{r_cf:.6f}"[:8] in out or format(r_cf, ".12g")[:10] in out

    def test_zero_price(self, capsys):
        assert cli.main(["oracle", "--pred", "0.5,0.5", "--s", "0"]) == 0
        out = capsys.readouterr().out
        assert "distortion 0.5" in out

    def test_custom_rho(self, capsys):
        assert cli.main(["oracle", "--pred", "0.5,0.5", "--s", "-1",
                         "--rho", "0,1;1,0"]) == 0


class TestNonConvergenceExit:
    def test_solve_exits_2_when_cells_do_not_converge(self, tmp_path):
        cfg = write_cfg(tmp_path, n=2, extra="").read_text()
        cfg = cfg.replace("epsilon = 1e-6", "epsilon = 1e-12\nmax_iter = 2")
        path = tmp_path / "hard.toml"
        path.write_text(cfg, encoding="utf-8")
        out = tmp_path / "out"
        assert cli.main(["solve", "--config", str(path), "--out", str(out)]) == 2
