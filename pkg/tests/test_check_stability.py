#!/usr/bin/env python3
"""
Tests for the check-sde-stability command line
"""

import json
import os
import sys
import tempfile
from pathlib import Path
from unittest.mock import Mock, patch

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from sde_stability_checker.artifacts import MANIFEST_NAME, read_paths
from sde_stability_checker.check_stability import (
    COMMANDS,
    EXIT_FAILED,
    EXIT_INTERRUPTED,
    EXIT_OK,
    EXIT_USAGE,
    main,
    parse_arguments,
    resolve_config,
)
from sde_stability_checker.config import ExperimentKind
from sde_stability_checker.rate_lab import ErrorKind

SAMPLE_CONFIGS = Path(__file__).parent / "sample_configs"


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files"""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    import shutil

    shutil.rmtree(temp_dir, ignore_errors=True)


def run_cli(*argv):
    return main([str(a) for a in argv])


def manifest_files(out):
    data = json.loads((Path(out) / MANIFEST_NAME).read_text())
    return data, sorted(f["name"] for f in data["files"])


class TestParseArguments:
    """Flags and their overrides"""

    def test_defaults(self):
        args = parse_arguments(["check"])
        assert args.command == "check"
        assert args.config is None
        assert args.verbose is False

    def test_overrides(self):
        args = parse_arguments(
            ["rates", "--seed", "5", "--steps", "128", "--paths", "50", "--ladder", "2,4,8", "--error-kind", "bv"]
        )
        cfg = resolve_config(args)
        assert cfg.experiment.kind is ExperimentKind.RATES
        assert cfg.plan.seed == 5
        assert cfg.plan.steps == 128
        assert cfg.plan.paths == 50
        assert cfg.experiment.n_ladder == (2, 4, 8)
        assert cfg.experiment.error_kind is ErrorKind.BV

    def test_record_flags(self):
        cfg = resolve_config(parse_arguments(["simulate", "--record", "terminal", "--paths", "10", "--steps", "8"]))
        assert cfg.plan.record.terminal
        assert not cfg.plan.record.sup
        assert not cfg.plan.record.full_paths

    def test_config_file_kind_is_overridden(self):
        args = parse_arguments(["norm", "--config", str(SAMPLE_CONFIGS / "check_sign.json"), "--p", "2"])
        cfg = resolve_config(args)
        assert cfg.experiment.kind is ExperimentKind.NORM
        assert cfg.experiment.p == 2.0
        assert cfg.plan.seed == 3


class TestExitCodes:
    """Usage errors exit with 2, failures with 1"""

    @pytest.mark.parametrize(
        "argv",
        [
            ["fly"],
            [],
            ["check", "--bogus"],
            ["rates", "--ladder", "2,x"],
            ["density", "--y-grid", "0,1"],
            ["check", "--workers", "0"],
            ["simulate", "--steps", "100"],
            ["check", "--seed", "-1"],
        ],
    )
    def test_usage_errors(self, argv, capsys):
        assert run_cli(*argv) == EXIT_USAGE
        assert "ERROR:" in capsys.readouterr().err

    def test_missing_config_file(self, temp_dir, capsys):
        assert run_cli("check", "--config", Path(temp_dir) / "absent.json") == EXIT_USAGE
        assert "--config" in capsys.readouterr().err

    def test_short_ladder(self, temp_dir, capsys):
        """A run that fails part-way still closes its directory with a manifest"""
        out = Path(temp_dir) / "rates"
        assert run_cli("rates", "--ladder", "2,4", "--out", out) == EXIT_USAGE
        assert "at least 3 levels" in capsys.readouterr().err
        assert sorted(p.name for p in out.iterdir()) == ["config.json", MANIFEST_NAME]
        data, files = manifest_files(out)
        assert files == ["config.json"]
        assert data["status"] == "error"
        assert "at least 3 levels" in data["error"]

    def test_subcommand_crash_keeps_the_manifest(self, temp_dir):
        out = Path(temp_dir) / "crash"

        def boom(cfg, writer):
            writer.write_json("partial.json", {"done": False})
            raise RuntimeError("boom")

        with patch.dict(COMMANDS, {ExperimentKind.CHECK: boom}):
            assert run_cli("check", "--out", out) == EXIT_FAILED
        data, files = manifest_files(out)
        assert files == ["config.json", "partial.json"]
        assert data["status"] == "error"
        assert data["error"] == "boom"

    def test_interrupted_run_keeps_the_manifest(self, temp_dir):
        out = Path(temp_dir) / "interrupted"
        with patch.dict(COMMANDS, {ExperimentKind.CHECK: Mock(side_effect=KeyboardInterrupt)}):
            assert run_cli("check", "--out", out) == EXIT_INTERRUPTED
        data, _ = manifest_files(out)
        assert data["status"] == "interrupted"

    def test_norm_violation(self, temp_dir, capsys):
        """A step moved far from the sign drift violates A-(1), so norm fails"""
        path = Path(temp_dir) / "cfg.json"
        path.write_text(
            json.dumps(
                {
                    "coefficients": {
                        "drift": "sign_drift",
                        "diffusion": "constant_diffusion",
                        "perturbed_drift": {
                            "name": "step_drift",
                            "params": {"theta": 3.0, "left": 1.0, "right": -1.0},
                        },
                    },
                    "experiment": {"kind": "norm"},
                }
            )
        )
        out = Path(temp_dir) / "out"
        assert run_cli("norm", "--config", path, "--out", out) == EXIT_FAILED
        assert "A-(1) violated" in capsys.readouterr().out
        data, files = manifest_files(out)
        assert files == ["config.json", "epsilon.csv"]
        assert data["status"] == "failed"

    def test_interrupt(self, temp_dir):
        with patch("sde_stability_checker.check_stability.run", side_effect=KeyboardInterrupt):
            assert run_cli("check", "--out", temp_dir) == EXIT_INTERRUPTED

    def test_unexpected_error(self, temp_dir, capsys):
        with patch("sde_stability_checker.check_stability.run", side_effect=RuntimeError("boom")):
            assert run_cli("check", "--out", temp_dir) == EXIT_FAILED
        assert "Unexpected error: boom" in capsys.readouterr().err

    def test_failed_check(self, temp_dir, capsys):
        """A perturbation far from the exact drift violates the smallness assumption"""
        path = Path(temp_dir) / "cfg.json"
        path.write_text(
            json.dumps(
                {
                    "coefficients": {
                        "drift": "sign_drift",
                        "diffusion": "constant_diffusion",
                        "perturbed_drift": {"name": "constant_drift", "params": {"value": 5.0}},
                    },
                    "experiment": {"kind": "check", "check_points": 2000, "check_pairs": 20000},
                }
            )
        )
        out = Path(temp_dir) / "out"
        assert run_cli("check", "--config", path, "--out", out) == EXIT_FAILED
        assert "FAIL:" in capsys.readouterr().out
        assert (out / MANIFEST_NAME).exists()


class TestCommands:
    """Small end-to-end runs of every cheap subcommand"""

    def test_check(self, temp_dir, capsys):
        out = Path(temp_dir) / "check"
        assert run_cli("check", "--config", SAMPLE_CONFIGS / "check_sign.json", "--out", out) == EXIT_OK
        data, files = manifest_files(out)
        assert files == ["check.json", "config.json"]
        assert data["command"] == "check"
        assert data["master_seed"] == 3
        assert len(data["config_hash"]) == 64
        assert sorted(p.name for p in out.iterdir()) == ["check.json", "config.json", MANIFEST_NAME]
        report = json.loads((out / "check.json").read_text())
        assert report["passed"] is True
        assert "PASS: check finished" in capsys.readouterr().out

    def test_seed_flag_reaches_the_manifest(self, temp_dir):
        out = Path(temp_dir) / "check"
        assert run_cli("check", "--config", SAMPLE_CONFIGS / "check_sign.json", "--seed", "42", "--out", out) == EXIT_OK
        data, _ = manifest_files(out)
        assert data["master_seed"] == 42

    def test_norm(self, temp_dir):
        out = Path(temp_dir) / "norm"
        assert run_cli("norm", "--config", SAMPLE_CONFIGS / "holder_pair.json", "--out", out) == EXIT_OK
        lines = (out / "epsilon.csv").read_text().splitlines()
        assert lines[0].startswith("n,")
        assert [line.split(",")[0] for line in lines[1:]] == ["2", "4", "8"]

    def test_mollify(self, temp_dir):
        out = Path(temp_dir) / "mollify"
        code = run_cli(
            "mollify", "--config", SAMPLE_CONFIGS / "check_sign.json", "--n", "4", "--out", out
        )
        assert code == EXIT_OK
        _, files = manifest_files(out)
        assert files == ["config.json", "mollify.csv", "mollify.json"]
        assert json.loads((out / "mollify.json").read_text())["within_bounds"] is True

    def test_yw_validate(self, temp_dir):
        out = Path(temp_dir) / "yw"
        code = run_cli("yw-validate", "--shape", "log_sine", "--out", out)
        assert code == EXIT_OK
        assert json.loads((out / "yw.json").read_text())["shape"] == "log_sine"

    def test_simulate(self, temp_dir, capsys):
        out = Path(temp_dir) / "simulate"
        assert run_cli("simulate", "--config", SAMPLE_CONFIGS / "simulate_small.json", "--out", out) == EXIT_OK
        data, files = manifest_files(out)
        assert files == ["config.json", "hat_paths.bin", "paths.bin", "simulate.csv"]
        assert data["grid_doubling"]["steps"] == 64
        assert read_paths(out / "paths.bin").shape == (300, 65)
        functionals = [line.split(",")[0] for line in (out / "simulate.csv").read_text().splitlines()[1:]]
        assert functionals == [
            "terminal",
            "sup",
            "stopped-deterministic(0.5)",
            "stopped-exit(1)",
            "bv-heaviside(0)",
        ]
        assert "INFO: terminal:" in capsys.readouterr().out

    def test_rates(self, temp_dir):
        out = Path(temp_dir) / "rates"
        code = run_cli("rates", "--config", SAMPLE_CONFIGS / "rates_small.json", "--out", out)
        assert code in (EXIT_OK, EXIT_FAILED)
        _, files = manifest_files(out)
        assert files == ["config.json", "fit.json", "rates.csv", "rates_plot.py"]
        fit = json.loads((out / "fit.json").read_text())
        assert fit["expected"] == "eps_1^0.5"
        assert fit["provenance"]["ladder"] == [2, 4, 8]
        assert (code == EXIT_OK) == (fit["verdict"] == "consistent")

    def test_density(self, temp_dir):
        path = Path(temp_dir) / "density.json"
        path.write_text(
            json.dumps(
                {
                    "coefficients": {"drift": "sign_drift", "diffusion": "constant_diffusion"},
                    "plan": {"steps": 64, "paths": 100},
                    "experiment": {
                        "kind": "density",
                        "order": 1,
                        "y_grid": [-1.0, 1.0, 3],
                        "mc_samples": 2000,
                        "check_pairs": 20000,
                    },
                }
            )
        )
        out = Path(temp_dir) / "out"
        assert run_cli("density", "--config", path, "--out", out) == EXIT_OK
        _, files = manifest_files(out)
        assert files == ["config.json", "density.csv", "density.json", "density_plot.py"]
        header = (out / "density.csv").read_text().splitlines()[0]
        assert header == "y,frozen,term_1,density,tail_bound,low_precision"
        assert "gaussian_bound" not in json.loads((out / "density.json").read_text())
