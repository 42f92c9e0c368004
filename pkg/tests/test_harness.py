from __future__ import annotations

import json

import pytest

from conftest import CONFIGS
from nash_lab import cli
from nash_lab.harness import (
    ConfigError,
    ExperimentReport,
    Series,
    clear_cache,
    emit_report,
    load_config,
    parse_config,
    run_experiment,
    vanishing_schedule,
)

BASE = """
[experiment]
kind = {kind}
seed = 7

[problem]
catalog = {catalog}
{extra}

[sweep]
N = {sweep}

[grid]
n = 13
L = 3.0

[solver]
time_steps = 20

[mfg]
mfg_n = 61
mfg_time_steps = 20
mfg_n_resolve = 61
mfg_time_steps_resolve = 20
test_measures = 2
test_x = -0.5, 0, 0.5
sample_clip = 1.0

[particles]
paths = 64
"""


def config_text(kind="nash", catalog="convex-quadratic-coupled", sweep="2", extra=""):
    return BASE.format(kind=kind, catalog=catalog, sweep=sweep, extra=extra)


class TestParsing:
    def test_round_trip(self):
        cfg = parse_config(config_text(extra="f_eps = 0.25\nT = 0.5"))
        assert cfg.kind == "nash" and cfg.T == 0.5 and cfg.params == {"f_eps": 0.25}
        assert cfg.grid_for(2).n == 13 and cfg.solver_config().time_steps == 20
        assert cfg.opt_int("paths", 0) == 64 and cfg.seed == 7

    def test_unknown_catalog(self):
        with pytest.raises(ConfigError):
            parse_config(config_text(catalog="cubic"))

    def test_empty_sweep(self):
        with pytest.raises(ConfigError):
            parse_config(config_text(sweep=""))

    def test_common_noise_rejected_for_convergence(self):
        with pytest.raises(ConfigError, match="beta"):
            parse_config(config_text(kind="convergence", extra="beta = 0.1"))
        assert parse_config(config_text(kind="nash", extra="beta = 0.1")).beta == 0.1

    def test_kind_mismatch(self):
        with pytest.raises(ConfigError):
            parse_config(config_text(kind="nash"), kind="propagation")

    @pytest.mark.parametrize("text", ["[problem]\nT = 1", "[experiment]\nkind = nash\n[solver]\nfoo = 1",
                                      "[experiment]\nkind = nash\n[problem]\nT = abc", "no section"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")

    def test_hash_stable_and_sensitive(self):
        a = parse_config(config_text())
        b = parse_config("; comment\n" + config_text())
        assert a.config_hash == b.config_hash and len(a.config_hash) == 16
        assert parse_config(config_text(), seed=8).config_hash != a.config_hash

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
    def test_shipped_configs_parse(self, path):
        load_config(path)


class TestReports:
    def report(self):
        rep = ExperimentReport("nash", "abc")
        rep.add("N=2", "err", 0.5, "nash_solver", 3)
        rep.add("N=2", "inf", float("inf"), "nash_solver")
        rep.criteria["ok"] = True
        rep.series.append(Series("err", [2.0, 3.0], [0.5, 0.25]))
        return rep

    def test_empty_csv_is_header_only(self, tmp_path):
        emit_report(ExperimentReport("nash", "abc"), tmp_path)
        assert (tmp_path / "report.csv").read_text() == "config_hash,run,metric,value,module,seed\n"
        assert json.loads((tmp_path / "timing.json").read_text())["config_hash"] == "abc"

    def test_json_round_trip(self, tmp_path):
        rep = self.report()
        emit_report(rep, tmp_path)
        back = ExperimentReport.from_dict(json.loads((tmp_path / "report.json").read_text()))
        assert back.metrics == rep.metrics and back.criteria == rep.criteria
        assert back.series == rep.series

    def test_svg_has_one_polyline_per_series(self, tmp_path):
        pytest.importorskip("matplotlib")
        rep = self.report()
        rep.series.append(Series("other", [2.0, 3.0], [1.0, 2.0]))
        emit_report(rep, tmp_path, ("svg",))
        text = (tmp_path / "report.svg").read_text()
        assert 'id="series-err"' in text and 'id="series-other"' in text
        first = text
        emit_report(rep, tmp_path, ("svg",))
        assert (tmp_path / "report.svg").read_text() == first

    def test_bytes_deterministic(self, tmp_path):
        rep = self.report()
        emit_report(rep, tmp_path / "a")
        rep.wall_time = 12.0
        emit_report(rep, tmp_path / "b")
        for name in ("report.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_output_path_is_a_file(self, tmp_path):
        (tmp_path / "f").write_text("")
        with pytest.raises(OSError):
            emit_report(self.report(), tmp_path / "f")


class TestRunners:
    def test_convergence_zero_data(self):
        clear_cache()
        rep = run_experiment(parse_config(config_text("convergence", "zero", "2, 3")))
        for N in (2, 3):
            assert rep.value(f"N={N}", "sup_error_u") == 0.0
            assert rep.value(f"N={N}", "sup_error_Du") == 0.0
            assert rep.value(f"N={N}", "chaos_gap") == 0.0
        assert rep.passed and rep.wall_time > 0

    def test_convergence_linear_data(self):
        rep = run_experiment(parse_config(config_text("convergence", "linear", "2, 3")))
        for N in (2, 3):
            assert rep.value(f"N={N}", "sup_error_u") <= 1e-3
            assert rep.value(f"N={N}", "sup_error_Du") <= 1e-3

    def test_vanishing_schedule(self):
        assert vanishing_schedule(2, 1.0) > vanishing_schedule(4, 1.0) > 0
        assert vanishing_schedule(4, 1e-6, sigma_min=0.1) == 0.1

    def test_particles_writes_ensembles(self, tmp_path):
        cfg = parse_config(config_text("particles"), out=str(tmp_path))
        rep = run_experiment(cfg)
        assert rep.passed and (tmp_path / "ensemble_N2.csv").exists()


class TestCLI:
    def write(self, tmp_path, text):
        p = tmp_path / "c.ini"
        p.write_text(text)
        return str(p)

    def test_solve_then_check(self, tmp_path, capsys):
        cfg = self.write(tmp_path, config_text("nash"))
        assert cli.main(["solve-nash", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
        assert (tmp_path / "s" / "N2" / "u_0.nlf").exists()
        code = cli.main(["check-monotone", "--config", cfg, "--out", str(tmp_path / "m"),
                         "--solution", str(tmp_path / "s"), "--mode", "block"])
        assert code == 0 and (tmp_path / "m" / "scan_N2.json").exists()
        assert "PASS" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = self.write(tmp_path, config_text("nash", catalog="cubic"))
        assert cli.main(["solve-nash", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_kind_mismatch_exit_code(self, tmp_path):
        cfg = self.write(tmp_path, config_text("nash"))
        assert cli.main(["solve-mfg", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_failing_criterion_exit_code(self, tmp_path):
        # a terminal cost below the admissible data margin
        text = config_text("propagation", "quadratic", extra="g_a = -0.3") + "\n[options]\npairs = 50\n"
        assert cli.main(["check-monotone", "--config", self.write(tmp_path, text),
                         "--out", str(tmp_path / "o")]) == 1

    def test_seed_override(self, tmp_path):
        cfg = self.write(tmp_path, config_text("particles"))
        cli.main(["simulate-particles", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "99"])
        rows = (tmp_path / "a" / "report.csv").read_text().splitlines()[1:]
        assert all(r.endswith(",99") for r in rows if "mean_x" in r)

    def test_bad_seed(self, tmp_path):
        with pytest.raises(SystemExit):
            cli.main(["solve-nash", "--config", "x.ini", "--seed", "-1"])
