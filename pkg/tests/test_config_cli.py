import json

import numpy as np
import pytest

from sensebound.cli import main
from sensebound.config import build_context, parse_config
from sensebound.errors import EmptySeries, ParseError, SenseboundError, ValidationError
from sensebound.report import (
    Series,
    read_run_csv,
    recompute_summary_from_csvs,
    render_svg,
    run_experiment,
    write_bundle_atomic,
)

MINIMAL = """
experiment = "minimal"
[system]
A = [[2.0]]
[channel]
kind = "linear-gaussian"
[run]
horizon = 20
runs = 2
seed = 7
"""


class TestParse:
    def test_minimal_fills_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.experiment == "minimal"
        ctx = build_context(cfg)
        assert ctx.filter_kind == "kalman"
        assert ctx.horizon == 20
        assert ctx.controller_mode == "predict"

    def test_unknown_channel_kind_names_field(self):
        bad = MINIMAL.replace('kind = "linear-gaussian"', 'kind = "lidar"')
        with pytest.raises(ValidationError) as err:
            parse_config(bad)
        assert err.value.field == "channel.kind"
        assert "lidar" in str(err.value)

    def test_schedule_needs_extension_flag(self):
        bad = MINIMAL.replace(
            'kind = "linear-gaussian"',
            'kind = "linear-gaussian"\nschedule = {"gamma": 0.5}',
        )
        with pytest.raises(ValidationError) as err:
            parse_config(bad)
        assert err.value.field == "channel.schedule"
        assert "extension" in str(err.value)

    def test_schedule_with_extension_ok(self):
        good = MINIMAL.replace(
            'kind = "linear-gaussian"',
            'kind = "linear-gaussian"\nschedule = {"gamma": 0.5}\nextension = true',
        )
        ctx = build_context(parse_config(good))
        assert ctx.noise_gamma == 0.5

    def test_parse_error_reports_line(self):
        with pytest.raises(ParseError) as err:
            parse_config("experiment = \"x\"\n[system]\nA [[2.0]]\n")
        assert err.value.line == 3

    def test_unknown_key_rejected(self):
        with pytest.raises(ParseError) as err:
            parse_config(MINIMAL + "\n[system]\nfoo = 1\n")
        assert "foo" in str(err.value)

    def test_unknown_section_rejected(self):
        with pytest.raises(ParseError):
            parse_config(MINIMAL + "\n[plumbing]\nx = 1\n")

    def test_horizon_validated(self):
        with pytest.raises(ValidationError) as err:
            parse_config(MINIMAL.replace("horizon = 20", "horizon = 0"))
        assert err.value.field == "run.horizon"

    def test_kalman_needs_linear_gaussian(self):
        bad = MINIMAL.replace(
            'kind = "linear-gaussian"', 'kind = "tanh-gaussian"'
        ) + "\n[filter]\nkind = \"kalman\"\n"
        with pytest.raises(ValidationError) as err:
            parse_config(bad)
        assert err.value.field == "filter.kind"

    def test_bare_token_is_string(self):
        cfg = parse_config(MINIMAL + "\n[outputs]\ndir = out/minimal\n")
        assert cfg.outputs["dir"] == "out/minimal"


class TestSvg:
    def test_basic_polyline(self):
        svg = render_svg(
            [Series("one", tuple(range(10)), tuple(np.linspace(1, 2, 10)))],
            title="demo", xlabel="t", ylabel="v",
        )
        assert svg.startswith("<svg") and svg.endswith("</svg>")
        assert svg.count("<polyline") == 1
        assert "demo" in svg and ">t<" in svg and ">v<" in svg

    def test_truncated_series_and_legend_annotation(self):
        svg = render_svg(
            [
                Series("full", tuple(range(10)), tuple(np.ones(10))),
                Series("halted", (0, 1, 2), (1.0, 2.0, 3.0), annotation="halted"),
            ]
        )
        assert svg.count("<polyline") == 2
        assert "halted (halted)" in svg

    def test_reference_line(self):
        svg = render_svg(
            [Series("di rate", tuple(range(5)), (0.9, 1.0, 1.1, 1.0, 1.0))],
            hlines=[("r_exp", 1.0)],
        )
        assert "r_exp" in svg and "stroke-dasharray" in svg

    def test_log_scale(self):
        svg = render_svg(
            [Series("growth", tuple(range(6)), tuple(4.0 ** np.arange(6)))],
            logy=True,
        )
        assert "1e" in svg

    def test_empty_raises(self):
        with pytest.raises(EmptySeries):
            render_svg([])
        with pytest.raises(EmptySeries):
            render_svg([Series("none", (), ())])


class TestBundle:
    def test_atomic_write_and_refusal(self, tmp_path):
        target = tmp_path / "bundle"
        write_bundle_atomic(str(target), {"a.txt": "hello", "sub/b.txt": "world"})
        assert (target / "a.txt").read_text() == "hello"
        assert (target / "sub" / "b.txt").read_text() == "world"
        with pytest.raises(SenseboundError):
            write_bundle_atomic(str(target), {"a.txt": "again"})

    def test_run_experiment_bundle_layout(self, tmp_path):
        cfg = parse_config(MINIMAL)
        bundle = run_experiment(cfg, out_dir=str(tmp_path / "b"), workers=1)
        assert bundle.exit_code == 0
        assert (tmp_path / "b" / "summary.json").exists()
        assert (tmp_path / "b" / "runs" / "run_00000.csv").exists()
        assert (tmp_path / "b" / "plots" / "err_norm_sq.svg").exists()
        assert (tmp_path / "b" / "config.cfg").exists()
        data = read_run_csv(tmp_path / "b" / "runs" / "run_00000.csv")
        assert len(data["t"]) == 20
        summary = json.loads((tmp_path / "b" / "summary.json").read_text())
        assert summary["schema_version"] == 1

    def test_csv_byte_identical_rerun(self, tmp_path):
        cfg1 = parse_config(MINIMAL)
        cfg2 = parse_config(MINIMAL)
        run_experiment(cfg1, out_dir=str(tmp_path / "b1"), workers=1)
        run_experiment(cfg2, out_dir=str(tmp_path / "b2"), workers=1)
        for name in ("run_00000.csv", "run_00001.csv"):
            b1 = (tmp_path / "b1" / "runs" / name).read_bytes()
            b2 = (tmp_path / "b2" / "runs" / name).read_bytes()
            assert b1 == b2

    def test_summary_recomputable_from_csvs(self, tmp_path):
        cfg = parse_config(MINIMAL)
        bundle = run_experiment(cfg, out_dir=str(tmp_path / "b"), workers=1)
        fresh = recompute_summary_from_csvs(str(tmp_path / "b"))
        assert fresh["di_rate_bits_per_step"] == pytest.approx(
            bundle.summary["di_rate_bits_per_step"], abs=1e-12
        )
        assert np.allclose(fresh["mean_err_sq"], bundle.summary["ensemble"]["mean_err_sq"])

    def test_debug_beliefs_flag(self, tmp_path):
        cfg = parse_config(MINIMAL + "\n[outputs]\ndebug_beliefs = true\n")
        bundle = run_experiment(cfg, out_dir=str(tmp_path / "b"), workers=1)
        assert bundle.exit_code == 0
        dump = json.loads((tmp_path / "b" / "beliefs" / "run_00000.json").read_text())
        assert len(dump) == 20
        assert dump[0]["representation"] == "gaussian"
        assert set(dump[0]) >= {"representation", "t", "kind", "mean", "cov"}


class TestCli:
    def test_run_and_exit_zero(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(MINIMAL)
        code = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out"),
                     "--workers", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "r_exp" in out and "bundle" in out

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["run", "--config", "x.cfg", "--frobnicate"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_missing_config_is_operational_error(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "nope.cfg"), "--workers", "1"])
        assert code == 1

    def test_decompose_prints_json(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(MINIMAL)
        assert main(["decompose", "--config", str(cfg_path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["r_exp_bits_per_step"] == 1.0
        assert out["n_u"] == 1

    def test_seed_env_override(self, tmp_path, capsys, monkeypatch):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(MINIMAL)
        monkeypatch.setenv("SENSEBOUND_SEED", "123")
        main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o1"),
              "--workers", "1"])
        s1 = json.loads((tmp_path / "o1" / "summary.json").read_text())
        assert s1["seed"] == 123
        monkeypatch.delenv("SENSEBOUND_SEED")
        main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o2"),
              "--workers", "1", "--seed", "99"])
        s2 = json.loads((tmp_path / "o2" / "summary.json").read_text())
        assert s2["seed"] == 99

    def test_sweep_rows(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(MINIMAL)
        code = main([
            "sweep", "--config", str(cfg_path), "--param", "channel.R",
            "--values", "[[0.25]],[[1.0]]", "--out", str(tmp_path / "sw"),
            "--workers", "1",
        ])
        assert code == 0
        rows = json.loads((tmp_path / "sw" / "sweep.json").read_text())
        assert len(rows) == 2
        assert (tmp_path / "sw" / "sweep.csv").read_text().startswith("param,value")

    def test_report_verifies_bundle(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(MINIMAL)
        main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "b"),
              "--workers", "1"])
        assert main(["report", "--bundle", str(tmp_path / "b")]) == 0
        out = capsys.readouterr().out
        assert "matches" in out
        assert (tmp_path / "b" / "recomputed.json").exists()

    def test_report_detects_tampered_summary(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(MINIMAL)
        main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "b"),
              "--workers", "1"])
        spath = tmp_path / "b" / "summary.json"
        s = json.loads(spath.read_text())
        s["di_rate_bits_per_step"] = 123.0
        spath.write_text(json.dumps(s))
        assert main(["report", "--bundle", str(tmp_path / "b")]) == 1

    def test_audit_command(self, tmp_path, capsys):
        code = main(["audit", "--experiment", "modulo-counterexample",
                     "--out", str(tmp_path / "aud"), "--workers", "1"])
        assert code == 0
        assert (tmp_path / "aud" / "audits" / "run_00000.json").exists()
        out = capsys.readouterr().out
        assert "assumption1: fail" in out

    def test_exit_code_two_on_necessity_violation(self):
        """The exit-code mapping flags acceptance violations as 2."""
        from sensebound.report import ReportBundle

        bundle = ReportBundle(
            out_dir="x", summary={}, csv_names=[], svg_names=[],
            acceptance_violation=True,
        )
        assert bundle.exit_code == 2
