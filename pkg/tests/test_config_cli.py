import json

import pytest

from glil.cli import parse_phi, parse_policy, resolve_seed, run_cli
from glil.config import DEFAULTS, ExperimentConfig, load_config
from glil.errors import ConfigError, DomainError, ParseError, ValidationError


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj), encoding="utf-8")
    return p


class TestLoadConfig:
    def test_minimal_file_gets_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, {}))
        assert cfg.to_dict() == {**DEFAULTS, "policies": [{"kind": "constant", "sigma": 1.0}]}
        assert cfg.burn_in == DEFAULTS["horizon"] / 1000

    def test_inverted_sigma_names_field(self, tmp_path):
        with pytest.raises(ValidationError) as exc:
            load_config(write(tmp_path, {"interval": [2.0, 1.0]}))
        assert any(v.startswith("interval") for v in exc.value.violations)

    def test_ratio_one_cites_requirement(self, tmp_path):
        with pytest.raises(ValidationError) as exc:
            load_config(write(tmp_path, {"schedule": {"kind": "geometric", "c": 1.0}}))
        assert any("c > 1" in v for v in exc.value.violations)

    def test_all_violations_listed(self, tmp_path):
        bad = {"interval": [2, 1], "n_seeds": 0, "extra": True, "policies": [{"kind": "constant", "sigma": 9}],
               "schedule": {"kind": "superpow", "alpha": 0.3, "typo": 1}, "maps": ["nope"]}
        with pytest.raises(ValidationError) as exc:
            load_config(write(tmp_path, bad))
        text = "\n".join(exc.value.violations)
        for field in ("interval", "n_seeds", "extra", "schedule.alpha", "schedule.typo", "maps"):
            assert field in text

    def test_alpha_respects_m(self):
        ExperimentConfig.from_dict({"schedule": {"kind": "superpow", "alpha": 0.1}, "m": 4})
        with pytest.raises(ValidationError):
            ExperimentConfig.from_dict({"schedule": {"kind": "superpow", "alpha": 0.1}, "m": 8})

    def test_parse_errors_carry_location(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_config(write(tmp_path, '{\n  "horizon": 5,\n  oops\n}'))
        assert exc.value.line == 3
        with pytest.raises(ParseError) as exc:
            load_config(write(tmp_path, '{\n  "seed": 1,\n  "horizon": "big"\n}'))
        assert exc.value.field == "horizon" and exc.value.line == 3
        with pytest.raises(ParseError):
            load_config(tmp_path / "missing.json")

    def test_round_trip_idempotent(self, tmp_path):
        cfg = load_config(write(tmp_path, {"interval": [1, 2], "schedule": {"kind": "explicit", "values": [10, 100]},
                                           "examples": [{"kind": "abs_power"}]}))
        again = load_config(write(tmp_path, cfg.dumps(), "again.json"))
        assert again.dumps() == cfg.dumps() and again.hash == cfg.hash

    def test_hash_ignores_seed_and_workers(self):
        a = ExperimentConfig.from_dict({"seed": 1})
        assert a.hash == ExperimentConfig.from_dict({"seed": 2, "workers": 3}).hash
        assert a.hash != ExperimentConfig.from_dict({"horizon": 999}).hash


class TestSeedPrecedence:
    def test_order(self, monkeypatch):
        monkeypatch.delenv("GLIL_SEED", raising=False)
        assert resolve_seed(None) == 42
        assert resolve_seed(None, 5) == 5
        monkeypatch.setenv("GLIL_SEED", "9")
        assert resolve_seed(None, 5) == 9
        assert resolve_seed(3, 5) == 3
        monkeypatch.setenv("GLIL_SEED", "0x10")
        with pytest.raises(ConfigError):
            resolve_seed(None)


class TestParsers:
    def test_phi(self):
        assert parse_phi("x2")(3.0) == 9.0
        assert parse_phi("negx2")(3.0) == -9.0
        assert parse_phi("pow:3")(-2.0) == 8.0
        with pytest.raises(DomainError):
            parse_phi("sin")
        with pytest.raises(DomainError):
            parse_phi("pow:abc")

    def test_policy(self):
        assert parse_policy("constant:2").sigma == 2.0
        assert parse_policy("regime:0.5:1,2").values == (1.0, 2.0)
        assert parse_policy('{"kind": "sign_feedback", "sigma_pos": 2, "sigma_neg": 1}').sigma_pos == 2.0
        with pytest.raises(DomainError):
            parse_policy("constant:x")


class TestCli:
    def test_gheat_prints_second_moment(self, capsys):
        assert run_cli(["gheat", "--phi", "x2", "--t", "1", "--sigma", "1,2"]) == 0
        out = capsys.readouterr().out
        assert "= 4.000000 ± 4.0e-03" in out

    def test_unknown_subcommand(self, capsys):
        assert run_cli(["frobnicate"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_domain_error_exit_code(self, capsys):
        assert run_cli(["gheat", "--sigma", "2,1"]) == 1
        assert "sigma_low" in capsys.readouterr().err

    def test_internal_error_exit_code(self, monkeypatch, capsys):
        import glil.cli

        def boom(args):
            raise RuntimeError("kaput")

        monkeypatch.setattr(glil.cli, "cmd_strassen", boom)
        assert run_cli(["strassen", "--line", "1"]) == 2
        assert "kaput" in capsys.readouterr().err

    def test_help_exits_zero(self, capsys):
        assert run_cli(["--help"]) == 0

    def test_other_subcommands(self, tmp_path, capsys):
        assert run_cli(["strassen", "--line", "2", "--beta", "1", "--out", str(tmp_path)]) == 0
        assert "dist(x, K_1) = 1.000" in capsys.readouterr().out
        assert run_cli(["examples", "--a", "2", "--sigma", "1,2"]) == 0
        assert "0.4052847346" in capsys.readouterr().out
        assert run_cli(["simulate", "--policy", "constant:2", "--horizon", "10", "--steps", "100000"]) == 0
        assert run_cli(["capacity", "--paths", "500", "--steps", "20", "--seed", "1"]) == 0
        assert run_cli(["gheat", "--mode", "bounds", "--points", "401"]) == 0
        report = json.loads((tmp_path / "strassen.json").read_text())
        assert set(report) == {"config_hash", "seed", "items", "wallclock_ms"}

    def test_lil_reports_byte_identical(self, tmp_path):
        cfg = write(tmp_path, {"horizon": 5000, "n_seeds": 2, "out_grid_points": 32, "interval": [1, 2],
                               "policies": [{"kind": "regime_switching", "rate": 0.01, "values": [1, 2]}]})
        for d in ("a", "b"):
            assert run_cli(["lil", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / d)]) == 0
        for f in ("lil_report.json", "lil_report.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        report = json.loads((tmp_path / "a" / "lil_report.json").read_text())
        assert report["seed"] == 7 and report["wallclock_ms"] is None
        assert run_cli(["lil", "--config", str(cfg), "--seed", "7", "--verify", str(tmp_path / "a" / "lil_report.json")]) == 0
        assert run_cli(["lil", "--config", str(cfg), "--seed", "8", "--verify", str(tmp_path / "a" / "lil_report.json")]) == 1

    def test_lil_bad_config_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, {"schedule": {"kind": "geometric", "c": 1}})
        assert run_cli(["lil", "--config", str(cfg)]) == 1
        assert "c > 1" in capsys.readouterr().err
