import shutil
from pathlib import Path

import numpy as np
import pytest

from spmrepro import campaign as cp
from spmrepro import cli
from spmrepro import io

MINI = dict(
    sources=(0.0, 90.0, 180.0, 270.0),
    n_mics=8,
    ir_len=256,
    max_order=2,
    filter_len=512,
    grid_azimuths=24,
    grid_freqs=8,
    deep_iter=5,
    cvx_iter=5,
    hidden=(8,),
)


def mini(out, **kw):
    return cp.ExperimentConfig(out=str(out), **dict(MINI, **kw))


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    cfg = mini(tmp_path_factory.mktemp("mini"))
    rep = cp.run_campaign(cfg)
    return cfg, rep


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class TestConfig:
    def test_defaults(self):
        cfg = cp.ExperimentConfig()
        assert cfg.sources == tuple(range(0, 360, 30))
        assert cfg.methods == cp.METHODS and cfg.positions == ("LL", "L", "O", "R", "RR")
        assert cfg.resp_len == 1535

    @pytest.mark.parametrize("kw,msg", [
        ({"methods": ("ori", "magic")}, "unknown methods"),
        ({"positions": ("O", "X")}, "unknown positions"),
        ({"sources": (0, 360)}, "duplicate"),
        ({"positions": ("L", "R")}, "design position"),
        ({"positions": ("O", "RR")}, "spmnet3 needs"),
        ({"jobs": 0}, "jobs"),
        ({"methods": ()}, "non-empty"),
    ])
    def test_rejected(self, kw, msg):
        with pytest.raises(ValueError, match=msg):
            cp.ExperimentConfig(**kw)

    def test_spmnet3_optional_positions(self):
        cfg = cp.ExperimentConfig(positions=("O",), methods=("fd", "spmnet"))
        assert cfg.positions == ("O",)

    def test_ini_round_trip(self, tmp_path):
        cfg = mini(tmp_path, seed=9, weights=(1, 2, 0.5, 0.25, 3), pool_std=True)
        path = tmp_path / "c.ini"
        path.write_text(cp.config_to_ini(cfg))
        assert cp.load_config(path) == cfg

    def test_overrides(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(cp.config_to_ini(mini(tmp_path)))
        cfg = cp.load_config(path, seed=5, methods=None)
        assert cfg.seed == 5 and cfg.methods == cp.METHODS

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[room]\nn_mic = 3\n")
        with pytest.raises(ValueError, match="unknown key"):
            cp.load_config(path)

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[rooms]\nn_mics = 3\n")
        with pytest.raises(ValueError, match="unknown section"):
            cp.load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            cp.load_config(tmp_path / "none.ini")

    def test_loss_config(self):
        lc = cp.ExperimentConfig(p=12.0).loss_config()
        assert lc.p == 12.0 and lc.weights == (1.0, 1.0, 0.1, 0.1, 1e4)
        assert lc.grid.azimuths.size == 72


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


class TestSimulate:
    def test_digests_per_seed(self, tmp_path):
        digests = []
        for name, seed in (("a", 0), ("b", 0), ("c", 1)):
            cfg = mini(tmp_path / name, seed=seed, positions=("O", "LL", "RR"))
            cp.cmd_simulate(cfg)
            digests.append(io.digest(tmp_path / name / "irs" / "O" / "ls03.wav"))
        assert digests[0] == digests[1] != digests[2]

    def test_default_layout(self, tmp_path):
        cfg = cp.ExperimentConfig(out=str(tmp_path), max_order=0, ir_len=64)
        paths = cp.cmd_simulate(cfg)
        assert sorted(paths) == sorted(cfg.positions)
        for pos in cfg.positions:
            wavs = sorted((tmp_path / "irs" / pos).glob("*.wav"))
            assert len(wavs) == 11
            data, _ = io.read_wav(wavs[0])
            assert data.shape == (16, 64)

    def test_manifest_fields(self, mini_run):
        cfg, _ = mini_run
        m = io.read_json(f"{cfg.out}/irs/O/manifest.json")
        assert m["dft_length"] == 1024 and m["seed"] == 0
        assert len(m["grid"]["azimuths"]) == 24
        np.testing.assert_allclose(m["nominal_center"], m["geometry"]["center"])
        ll = io.read_json(f"{cfg.out}/irs/LL/manifest.json")
        assert ll["geometry"]["center"] != m["geometry"]["center"]
        assert ll["nominal_center"] == m["nominal_center"]

    def test_design_without_data(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="simulate"):
            cp.cmd_design(mini(tmp_path))


class TestCampaignOutputs:
    def test_design_rows_and_logs(self, mini_run):
        cfg, _ = mini_run
        header, rows = io.read_csv(f"{cfg.out}/design.csv")
        assert header[:3] == ["method", "source_azimuth", "status"]
        assert len(rows) == len(cp.METHODS) * 4
        logs = sorted(p.name for p in (Path(cfg.out) / "logs").iterdir())
        assert not any(n.startswith(("fd_", "ori_")) for n in logs)
        assert len(logs) == 4 * 4

    def test_parallel_jobs_identical(self, mini_run, tmp_path):
        cfg, _ = mini_run
        par = cp.with_overrides(cfg, out=str(tmp_path), jobs=2, methods=("fd", "cvx", "spmnet3"))
        shutil.copytree(Path(cfg.out) / "irs", tmp_path / "irs")
        cp.cmd_design(par)
        _, rows = io.read_csv(tmp_path / "design.csv")
        _, ref = io.read_csv(Path(cfg.out) / "design.csv")
        assert rows == [r for r in ref if r[0] in par.methods]

    def test_spmnet3_log_has_three_positions(self, mini_run):
        cfg, _ = mini_run
        _, rows = io.read_csv(f"{cfg.out}/logs/spmnet3_az090.csv")
        first = [r[1] for r in rows if r[0] == "0"]
        assert first == ["LL", "O", "RR"]

    def test_metric_rows(self, mini_run):
        cfg, rep = mini_run
        header, rows = io.read_csv(f"{cfg.out}/metrics.csv")
        assert header == cp.METRIC_HEADER
        assert len(rows) == len(cp.METHODS) * 4 * 5
        assert rep.ok and not rep.failures

    def test_sspm_files(self, mini_run):
        cfg, _ = mini_run
        d = Path(cfg.out) / "sspm"
        for m in ("target",) + cp.METHODS:
            for pos in cfg.positions:
                img = io.read_pgm(d / f"{m}_{pos}.pgm")
                assert img.shape == (4, 24)
                assert (d / f"{m}_{pos}.png").stat().st_size > 0

    def test_target_dominance(self, mini_run):
        cfg, rep = mini_run
        for pos in cfg.positions:
            assert rep.dominance[("target", pos)] == 1.0

    def test_filter_manifest(self, mini_run):
        cfg, _ = mini_run
        h, meta = io.load_filter_bank(Path(cfg.out) / "filters" / "cvx" / "az180")
        assert h.shape == (11, 512)
        assert meta["method"] == "cvx" and meta["seed"] == 0 and len(meta["loss_terms"]) == 5
        assert meta["config_digest"] == io.digest(cp.config_to_ini(cfg).encode())

    def test_figures(self, mini_run):
        cfg, _ = mini_run
        names = {p.name for p in (Path(cfg.out) / "figures").iterdir()}
        assert {"sspm_O.png", "loss_cvx.png", "loss_spmnet3.png"} <= names

    def test_report_from_disk_matches(self, mini_run):
        cfg, rep = mini_run
        assert cp.cmd_report(cfg) == cp.cmd_report(cfg, rep)


class TestReport:
    def make_report(self):
        rows = []
        for m, base in (("ori", 5.0), ("fd", 3.0), ("cvx", 1.0)):
            for pos in ("LL", "O", "RR"):
                rows.append([m, "0", pos, base, base + 1] + [base] * 6 + [base, base + 0.5])
        return cp.RunReport(rows, {("cvx", "O"): 0.75, ("target", "O"): 1.0}, [], [])

    def test_layout_and_bold(self, tmp_path):
        cfg = mini(tmp_path, methods=("ori", "fd", "cvx"), positions=("LL", "O", "RR"))
        text = cp.cmd_report(cfg, self.make_report())
        lines = text.splitlines()
        hdr = next(line for line in lines if line.startswith("| Method | nPRQ"))
        assert hdr.count("|") == 10
        assert "nPRQ pre, pos O" in hdr and "SD 5.65 kHz, avg" in hdr
        cvx = next(line for line in lines if line.startswith("| CVX |"))
        assert cvx.count("**") == 16
        ori = next(line for line in lines if line.startswith("| ORI |"))
        assert "**" not in ori
        assert "| TARGET | n/a | 1.00 | n/a |" in text
        assert (tmp_path / "report.md").read_text() == text

    def test_empty_method_list(self, tmp_path):
        cfg = mini(tmp_path, methods=("ori",))
        text = cp.cmd_report(cfg, self.make_report(), methods=[])
        lines = text.splitlines()
        i = next(k for k, line in enumerate(lines) if line.startswith("| Method | nPRQ"))
        assert lines[i + 1].startswith("|---") and lines[i + 2] == ""

    def test_failures_listed(self, tmp_path):
        rep = self.make_report()
        rep.failures = [["design", "fd", "30", "", "LinAlgError: singular"]]
        cfg = mini(tmp_path, methods=("ori", "fd", "cvx"))
        assert "- design fd source 30 : LinAlgError: singular" in cp.cmd_report(cfg, rep)


class TestAlign:
    def test_level_align(self):
        d = np.array([[0.0, 2.0], [1.0, 0.0]])
        g = np.array([[0.0, -0.5], [0.25, 0.0]])
        np.testing.assert_allclose(cp.level_align(g, d), g * 4)
        np.testing.assert_array_equal(cp.level_align(np.zeros((2, 2)), d), 0)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


class TestCli:
    def write_config(self, tmp_path, **kw):
        path = tmp_path / "mini.ini"
        path.write_text(cp.config_to_ini(mini(tmp_path / "out", **kw)))
        return path

    def test_stages(self, tmp_path, capsys):
        ini = self.write_config(tmp_path, methods=("ori", "fd"), positions=("O",))
        assert cli.main(["simulate", "--config", str(ini)]) == 0
        assert cli.main(["design", "--config", str(ini)]) == 0
        assert cli.main(["evaluate", "--config", str(ini)]) == 0
        assert cli.main(["report", "--config", str(ini)]) == 0
        out = capsys.readouterr().out
        assert "# Campaign report" in out and "| FD |" in out

    def test_overrides_out_and_methods(self, tmp_path):
        ini = self.write_config(tmp_path, positions=("O",), methods=("fd",))
        assert cli.main(["run", "--config", str(ini), "--out", str(tmp_path / "x"), "--methods", "ori",
                         "--seed", "4"]) == 0
        assert (tmp_path / "x" / "filters" / "ori").is_dir()
        assert not (tmp_path / "x" / "filters" / "fd").exists()
        assert cp.load_config(tmp_path / "x" / "config.ini").seed == 4

    def test_bad_method(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            cli.main(["design", "--methods", "ori,wizard"])
        assert e.value.code == 2

    def test_bad_seed(self):
        with pytest.raises(SystemExit):
            cli.main(["simulate", "--seed", "-1"])

    def test_config_error(self, tmp_path, capsys):
        ini = tmp_path / "bad.ini"
        ini.write_text("[experiment]\nmethods = spmnet3\npositions = O\n")
        assert cli.main(["simulate", "--config", str(ini)]) == 2
        assert "spmnet3" in capsys.readouterr().err

    def test_missing_data(self, tmp_path, capsys):
        ini = self.write_config(tmp_path, positions=("O",), methods=("fd",))
        assert cli.main(["evaluate", "--config", str(ini)]) == 2
        assert "simulate" in capsys.readouterr().err

    def test_failure_exit_code(self, tmp_path, monkeypatch):
        ini = self.write_config(tmp_path, positions=("O",), methods=("ori", "fd"))
        assert cli.main(["simulate", "--config", str(ini)]) == 0

        def boom(*a, **k):
            raise np.linalg.LinAlgError("singular")

        monkeypatch.setattr(cp.opt, "design_fd", boom)
        assert cli.main(["design", "--config", str(ini)]) == 1
        _, rows = io.read_csv(tmp_path / "out" / "failures.csv")
        assert len(rows) == 4 and all(r[1] == "fd" and "singular" in r[4] for r in rows)
        assert cli.main(["evaluate", "--config", str(ini)]) == 1
        shutil.rmtree(tmp_path / "out")

    def test_zero_filters_reported(self, tmp_path, monkeypatch):
        ini = self.write_config(tmp_path, positions=("O",), methods=("ori",))
        zero = cp.opt.DesignResult(np.zeros((11, 512)), "ori")
        monkeypatch.setattr(cp.opt, "ori_filters", lambda *a, **k: zero)
        assert cli.main(["run", "--config", str(ini)]) == 1
        _, rows = io.read_csv(tmp_path / "out" / "failures.csv")
        assert len(rows) == 4 and all(r[4] == "all-zero filter bank" for r in rows)
