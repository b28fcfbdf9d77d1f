#!/usr/bin/env python3
"""
Tests for result files and the run manifest
"""

import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from sde_stability_checker import __version__
from sde_stability_checker.artifacts import (
    MANIFEST_NAME,
    PATH_DUMP_HEADER,
    ArtifactWriter,
    RunManifest,
    Stopwatch,
    file_digest,
    read_paths,
)
from sde_stability_checker.errors import ConfigurationError, StabilityCheckError


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files"""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    import shutil

    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture
def writer(temp_dir):
    return ArtifactWriter(Path(temp_dir) / "out")


def manifest(**kwargs):
    defaults = {
        "command": "check",
        "config_hash": "0" * 64,
        "master_seed": 7,
        "started_at": "2024-01-01T00:00:00+00:00",
        "wall_clock_seconds": 1.5,
        "tolerance_profile": "default",
        "tolerances": {"truncation_radius": 8.0},
    }
    defaults.update(kwargs)
    return RunManifest(**defaults)


class TestArtifactWriter:
    """Writing files into one output directory"""

    def test_creates_the_directory(self, writer):
        assert writer.directory.is_dir()
        assert writer.written == ()

    def test_csv(self, writer):
        path = writer.write_csv("table.csv", ("n", "value"), [(1, "0.5"), (2, "0.25")])
        assert path.read_text() == "n,value\n1,0.5\n2,0.25\n"

    def test_json_with_non_finite_values(self, writer):
        path = writer.write_json("doc.json", {"a": math.inf, "b": math.nan, "c": np.float64(2.5), "d": (1, 2)})
        assert json.loads(path.read_text()) == {"a": "inf", "b": "nan", "c": 2.5, "d": [1, 2]}

    def test_plot_script(self, writer):
        path = writer.write_plot_script("rates_plot.py", "rates.csv", "epsilon", "error", "rates")
        text = path.read_text()
        assert 'np.genfromtxt("rates.csv"' in text
        assert 'ax.set_xscale("log")' in text
        assert 'fig.savefig("rates_plot.png"' in text
        compile(text, "rates_plot.py", "exec")

    @pytest.mark.parametrize("name", [MANIFEST_NAME, "../escape.csv", "sub/dir.csv"])
    def test_rejected_names(self, writer, name):
        with pytest.raises(ConfigurationError):
            writer.write_csv(name, ("a",), [])

    def test_rewriting_a_file_lists_it_once(self, writer):
        writer.write_json("doc.json", {"a": 1})
        writer.write_json("doc.json", {"a": 2})
        assert [p.name for p in writer.written] == ["doc.json"]

    def test_unwritable_directory(self, temp_dir):
        blocker = Path(temp_dir) / "file"
        blocker.write_text("")
        with pytest.raises(ConfigurationError) as excinfo:
            ArtifactWriter(blocker / "out")
        assert excinfo.value.path == "--out"


class TestManifest:
    """Exactly one manifest, listing every file with its digest"""

    def test_lists_files_with_digests(self, writer):
        csv_path = writer.write_csv("b.csv", ("x",), [(1,)])
        json_path = writer.write_json("a.json", {"k": "v"})
        path = writer.close(manifest())
        data = json.loads(path.read_text())
        assert [f["name"] for f in data["files"]] == ["a.json", "b.csv"]
        assert data["files"][0]["sha256"] == file_digest(json_path)
        assert data["files"][1]["sha256"] == file_digest(csv_path)
        assert data["tool_version"] == __version__
        assert data["master_seed"] == 7
        assert data["grid_doubling"] is None
        assert data["status"] == "passed"
        assert data["error"] is None
        assert sorted(p.name for p in writer.directory.iterdir()) == ["a.json", "b.csv", MANIFEST_NAME]

    def test_closed_writer_refuses_files(self, writer):
        writer.close(manifest())
        with pytest.raises(StabilityCheckError):
            writer.write_json("late.json", {})

    def test_stale_manifest_is_replaced(self, temp_dir):
        directory = Path(temp_dir) / "out"
        ArtifactWriter(directory).close(manifest(master_seed=1))
        second = ArtifactWriter(directory)
        assert not (directory / MANIFEST_NAME).exists()
        second.close(manifest(master_seed=2))
        assert json.loads((directory / MANIFEST_NAME).read_text())["master_seed"] == 2

    def test_grid_doubling_entry(self, writer):
        path = writer.close(manifest(grid_doubling={"steps": 64, "fine": 0.1, "coarse": 0.12}))
        assert json.loads(path.read_text())["grid_doubling"]["coarse"] == 0.12


class TestPathDump:
    """Binary per-path dumps"""

    def test_read_back(self, writer):
        paths = np.arange(12, dtype=float).reshape(3, 4) / 7.0
        path = writer.write_paths("paths.bin", paths)
        assert path.stat().st_size == PATH_DUMP_HEADER.size + 12 * 8
        np.testing.assert_array_equal(read_paths(path), paths)

    def test_one_dimensional_input(self, writer):
        with pytest.raises(ConfigurationError):
            writer.write_paths("paths.bin", np.zeros(5))

    def test_truncated_dump(self, writer):
        path = writer.write_paths("paths.bin", np.zeros((2, 3)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ConfigurationError):
            read_paths(path)

    def test_foreign_file(self, writer):
        path = writer.write_csv("not_paths.bin", ("a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k"), [])
        with pytest.raises(ConfigurationError):
            read_paths(path)


class TestStopwatch:
    def test_elapsed(self):
        clock = Stopwatch.start()
        assert clock.elapsed() >= 0.0
        assert clock.started_at.endswith("+00:00")
