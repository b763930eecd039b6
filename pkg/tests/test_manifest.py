"""Tests for temporal_rules.manifest."""

from __future__ import annotations

import json
from pathlib import Path

from temporal_rules import __version__
from temporal_rules.manifest import RunManifest, manifest_path_for, sha256_file


class TestSha256File:
    def test_known_digest(self, tmp_path: Path) -> None:
        path = tmp_path / "abc.txt"
        path.write_bytes(b"abc")
        assert sha256_file(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


class TestManifestPath:
    def test_directory(self, tmp_path: Path) -> None:
        assert manifest_path_for(tmp_path) == tmp_path / "manifest.json"

    def test_file(self, tmp_path: Path) -> None:
        assert manifest_path_for(tmp_path / "best.json") == tmp_path / "best.json.manifest.json"


class TestRunManifest:
    def test_write(self, tmp_path: Path) -> None:
        data = tmp_path / "panel.csv"
        data.write_text("object_id,time,mark\na,1,3\n")
        manifest = RunManifest("optimize", seed=4)
        manifest.add_input(data)
        manifest.add_output(tmp_path / "best.json")
        manifest.options["measure"] = "stddev"

        doc = json.loads(manifest.write(tmp_path / "m.json").read_text())
        assert doc["subcommand"] == "optimize"
        assert doc["seed"] == 4
        assert doc["version"] == __version__
        assert doc["inputs"] == [str(data)]
        assert doc["input_digests"][str(data)] == sha256_file(data)
        assert doc["outputs"] == [str(tmp_path / "best.json")]
        assert doc["options"] == {"measure": "stddev"}
