import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from graphene_mep import __version__
from graphene_mep.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from graphene_mep.config import ConfigError, default_config, load_config, parse_config
from graphene_mep.io import read_csv, write_csv, write_json_atomic

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).parent / "fixtures"

COMMAND_FOR = {
    "collimation": "solve-collimation",
    "collimation_degenerate": "solve-collimation",
    "dd_degenerate_steady": "solve-dd",
    "dd_gaussian": "solve-dd",
    "dd_mb_steady": "solve-dd",
    "hydro_poisson": "solve-hydro",
    "hydro_relaxation": "solve-hydro",
    "hydro_uniform": "solve-hydro",
    "invert": "invert",
    "regimes": "regimes",
    "selftest": "selftest",
    "tabulate": "tabulate",
    "wave": "solve-wave",
}

INVALID = {
    "unknown_top_level.toml": "verbose",
    "unknown_nested.toml": "hydro.grid.spacing",
    "unknown_section.toml": "solver",
    "unknown_state_key.toml": "invert.states.0.velocity",
    "wrong_version.toml": "schema_version",
    "missing_version.toml": "schema_version",
    "out_of_range.toml": "hydro.cfl",
}


def _run(tmp_path, command, *extra, config=None, name="out"):
    out = tmp_path / name
    argv = [command, "--out", str(out), *extra]
    if config is not None:
        argv += ["--config", str(config)]
    code = main(argv)
    manifest = json.loads((out / "manifest.json").read_text()) if (out / "manifest.json").exists() else None
    return code, out, manifest


def _write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestConfig:
    def test_every_shipped_config_has_a_command(self):
        assert {p.stem for p in CONFIGS.glob("*.toml")} == set(COMMAND_FOR)

    @pytest.mark.parametrize("name", sorted(COMMAND_FOR))
    def test_shipped_configs_validate(self, name):
        cfg = load_config(CONFIGS / f"{name}.toml")
        assert cfg.schema_version == 1

    @pytest.mark.parametrize("fixture, key", sorted(INVALID.items()))
    def test_invalid_fixture_names_key(self, fixture, key):
        with pytest.raises(ConfigError) as info:
            load_config(FIXTURES / fixture)
        assert key in str(info.value)
        assert any(loc == key for loc, _ in info.value.problems)

    def test_malformed_toml(self):
        with pytest.raises(ConfigError, match="malformed TOML"):
            load_config(FIXTURES / "malformed.toml")

    def test_minimal_file_gives_defaults(self):
        assert parse_config("schema_version = 1") == default_config()

    def test_inf_accepted_for_hydro_relaxation(self):
        assert math.isinf(parse_config("schema_version = 1\n[hydro]\ntau0 = inf").hydro.tau0)

    def test_finite_tau0_required_for_drift_diffusion(self):
        with pytest.raises(ConfigError, match="finite"):
            parse_config("schema_version = 1\n[diffusion]\ntau0 = inf")

    def test_grid_shape_checks(self):
        with pytest.raises(ConfigError, match="one entry per axis"):
            parse_config("schema_version = 1\n[wave.grid]\ncells = [8, 8]\nlength = [1.0]")

    def test_missing_file_is_os_error(self, tmp_path):
        with pytest.raises(OSError):
            load_config(tmp_path / "absent.toml")


class TestIO:
    def test_csv_round_trip_exact(self, tmp_path, rng):
        rows = rng.normal(size=(5, 3))
        write_csv(tmp_path / "a.csv", ["p", "q", "r"], rows, {"b": 2, "a": "x"})
        meta, header, back = read_csv(tmp_path / "a.csv")
        assert header == ["p", "q", "r"] and meta == {"a": "x", "b": "2"}
        assert np.array_equal(back, rows)
        assert (tmp_path / "a.csv").read_text().startswith("# a: x\n# b: 2\n")

    def test_json_atomic(self, tmp_path):
        write_json_atomic(tmp_path / "m.json", {"v": np.float64(1.5), "a": np.arange(3), "ok": np.bool_(True)})
        assert json.loads((tmp_path / "m.json").read_text()) == {"a": [0, 1, 2], "ok": True, "v": 1.5}
        assert [p.name for p in tmp_path.iterdir()] == ["m.json"]

    def test_json_rejects_unknown_types(self, tmp_path):
        with pytest.raises(TypeError):
            write_json_atomic(tmp_path / "m.json", {"x": object()})
        assert not list(tmp_path.iterdir())


class TestCommands:
    @pytest.mark.parametrize("name", sorted(COMMAND_FOR))
    def test_shipped_config_runs_clean(self, tmp_path, name):
        code, out, manifest = _run(tmp_path, COMMAND_FOR[name], config=CONFIGS / f"{name}.toml")
        assert code == EXIT_OK, manifest.get("error") or manifest["checks"]
        assert manifest["status"] == "ok"
        assert all(c["passed"] for c in manifest["checks"].values())
        for f in manifest["outputs"]:
            assert (out / f).exists()

    def test_invert_origin(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, "schema_version = 1\n[[invert.states]]\nn_over_nT = 0.8224670334241132\n")
        code, _, _ = _run(tmp_path, "invert", config=cfg)
        assert code == EXIT_OK
        assert "A=0 B=0" in capsys.readouterr().out

    def test_default_invert_runs_without_config(self, tmp_path, capsys):
        code, _, manifest = _run(tmp_path, "invert")
        assert code == EXIT_OK and manifest["config_path"] is None
        assert "A=0 B=0" in capsys.readouterr().out

    def test_hydro_uniform_reports_no_change(self, tmp_path):
        _, _, manifest = _run(tmp_path, "solve-hydro", config=CONFIGS / "hydro_uniform.toml")
        assert manifest["diagnostics"]["uniform_state_change"] <= 1e-13

    def test_dd_maxwell_boltzmann_steady(self, tmp_path):
        _, _, manifest = _run(tmp_path, "solve-dd", config=CONFIGS / "dd_mb_steady.toml")
        assert manifest["checks"]["steady_state_residual"]["value"] <= 1e-10

    def test_manifest_fields(self, tmp_path):
        code, out, manifest = _run(tmp_path, "selftest", "--seed", "7", "--threads", "2", config=CONFIGS / "selftest.toml")
        assert code == EXIT_OK
        for key in ("command", "code_version", "seed", "threads", "started_utc", "config", "wall_clock_s", "checks", "outputs", "status"):
            assert key in manifest
        assert manifest["seed"] == 7 and manifest["threads"] == 2
        assert manifest["code_version"] == __version__
        assert manifest["config"]["schema_version"] == 1

    def test_csv_metadata(self, tmp_path):
        _, out, _ = _run(tmp_path, "regimes", "--seed", "3", config=CONFIGS / "regimes.toml")
        meta, header, _ = read_csv(out / "regimes.csv")
        assert header == ["u", "X", "Y", "Z", "Z_perp"]
        assert meta["seed"] == "3" and meta["command"] == "regimes" and float(meta["n_T"]) == pytest.approx(1 / (2 * math.pi))

    @pytest.mark.parametrize("name", ["invert", "dd_gaussian", "wave"])
    def test_deterministic_output(self, tmp_path, name):
        cfg = CONFIGS / f"{name}.toml"
        _, a, ma = _run(tmp_path, COMMAND_FOR[name], "--seed", "11", config=cfg, name="a")
        _, b, mb = _run(tmp_path, COMMAND_FOR[name], "--seed", "11", config=cfg, name="b")
        assert ma["outputs"] == mb["outputs"] and ma["outputs"]
        for f in ma["outputs"]:
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_seed_changes_random_states(self, tmp_path):
        cfg = CONFIGS / "invert.toml"
        _, a, _ = _run(tmp_path, "invert", "--seed", "1", config=cfg, name="a")
        _, b, _ = _run(tmp_path, "invert", "--seed", "2", config=cfg, name="b")
        assert (a / "invert.csv").read_bytes() != (b / "invert.csv").read_bytes()


class TestExitCodes:
    def test_config_error_exits_1(self, tmp_path, capsys):
        code, _, manifest = _run(tmp_path, "invert", config=FIXTURES / "unknown_nested.toml")
        assert code == EXIT_USAGE
        assert manifest["status"] == "error" and manifest["error"]["kind"] == "config"
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["exit_code"] == 1 and "hydro.grid.spacing" in record["message"]

    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as info:
            main(["no-such-command"])
        assert info.value.code == EXIT_USAGE
        with pytest.raises(SystemExit) as info:
            main(["invert", "--seed", "-1"])
        assert info.value.code == EXIT_USAGE

    def test_failed_check_exits_2(self, tmp_path):
        # Four cells per wavelength: leapfrog dispersion spoils the measured speed.
        cfg = _write_config(tmp_path, "schema_version = 1\n[wave]\nsteps = 200\n[wave.grid]\ncells = [4]\n")
        code, _, manifest = _run(tmp_path, "solve-wave", config=cfg)
        assert code == EXIT_NUMERICAL
        assert manifest["status"] == "checks_failed"
        assert not manifest["checks"]["wave_speed"]["passed"]

    def test_domain_error_exits_2(self, tmp_path):
        cfg = _write_config(
            tmp_path,
            "schema_version = 1\n[diffusion]\nregime = 'degenerate'\n[diffusion.initial]\nkind = 'steady'\nlevel = -1.0\n",
        )
        code, _, manifest = _run(tmp_path, "solve-dd", config=cfg)
        assert code == EXIT_NUMERICAL
        assert manifest["error"]["type"] == "DomainError"

    def test_unwritable_output_exits_3(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["invert", "--out", str(blocker)]) == EXIT_IO

    def test_missing_config_exits_3(self, tmp_path):
        code, _, manifest = _run(tmp_path, "invert", config=tmp_path / "absent.toml")
        assert code == EXIT_IO and manifest["error"]["kind"] == "io"

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "graphene_mep", "invert", "--out", str(tmp_path / "o")],
            capture_output=True,
            text=True,
            check=False,
        )
        assert proc.returncode == 0
        assert "PASS inversion_residual" in proc.stdout
