from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from sphmm_sid.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from sphmm_sid.corpus import load_manifest, write_manifest
from sphmm_sid.frontend import AudioClip, write_wav
from sphmm_sid.harness import NumericError


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, tiny_spec, tiny_model_config):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(tiny_spec.to_dict()))
    assert main(["gen-synth", "--spec", str(root / "spec.json"), "--out", str(root / "corpus")]) == EXIT_OK
    config = {
        "manifest_path": "corpus/manifest.csv",
        "model": {
            "num_states": tiny_model_config.num_states,
            "num_mixtures": tiny_model_config.num_mixtures,
            "max_iterations": tiny_model_config.max_iterations,
        },
        "output_dir": "results",
    }
    (root / "exp.json").write_text(json.dumps(config))
    assert main(["train", "--config", str(root / "exp.json"), "--out", str(root / "models")]) == EXIT_OK
    return root


class TestExitCodes:
    def test_help(self, capsys):
        assert main(["--help"]) == EXIT_OK
        assert "sweep-alpha" in capsys.readouterr().out

    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["bogus"],
            ["train", "--config", "x.json"],
            ["identify", "--models", "m", "--wav", "a.wav", "--alpha", "1.5"],
            ["sweep-alpha", "--config", "x.json", "--alphas", "0:1:0"],
        ],
    )
    def test_usage(self, argv):
        assert main(argv) == EXIT_USAGE

    def test_single_alpha_sweep_is_usage(self, workspace):
        argv = ["sweep-alpha", "--config", str(workspace / "exp.json"), "--alphas", "0.5"]
        assert main(argv) == EXIT_USAGE

    def test_bad_config_field_is_usage(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"manifest_path": "m.csv", "bogus": 1}))
        assert main(["evaluate", "--config", str(tmp_path / "c.json")]) == EXIT_USAGE

    def test_missing_manifest_is_data(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"manifest_path": "missing.csv"}))
        assert main(["evaluate", "--config", str(tmp_path / "c.json")]) == EXIT_DATA

    def test_protocol_violation_is_data(self, workspace, tmp_path, capsys):
        corpus = workspace / "corpus"
        rows = [
            dataclasses.replace(r, audio_path=str(corpus / r.audio_path))
            for r in load_manifest(corpus / "manifest.csv")
        ]
        rows.append(dataclasses.replace(rows[-1], id="ghost", speaker_id="M09", gender="M", session="test"))
        write_manifest(tmp_path / "manifest.csv", rows)
        (tmp_path / "c.json").write_text(json.dumps({"manifest_path": "manifest.csv"}))
        assert main(["evaluate", "--config", str(tmp_path / "c.json")]) == EXIT_DATA
        assert "M09" in capsys.readouterr().err

    def test_missing_bundle_is_data(self, tmp_path):
        write_wav(tmp_path / "a.wav", AudioClip(np.zeros(1200), 12000))
        assert main(["identify", "--models", str(tmp_path / "none"), "--wav", str(tmp_path / "a.wav")]) == EXIT_DATA

    def test_numeric_failure(self, workspace, monkeypatch):
        def explode(*args, **kwargs):
            raise NumericError("non-finite model score encountered")

        monkeypatch.setattr("sphmm_sid.cli.prepare", explode)
        assert main(["evaluate", "--config", str(workspace / "exp.json")]) == EXIT_NUMERIC


class TestSubcommands:
    def test_gen_synth_seed_override(self, workspace, tmp_path):
        argv = ["gen-synth", "--spec", str(workspace / "spec.json"), "--out", str(tmp_path), "--seed", "99"]
        assert main(argv) == EXIT_OK
        assert json.loads((tmp_path / "synth_spec.json").read_text())["seed"] == 99
        assert len(load_manifest(tmp_path / "manifest.csv", check_audio=True)) == len(
            load_manifest(workspace / "corpus" / "manifest.csv")
        )

    def test_identify(self, workspace, capsys):
        record = next(r for r in load_manifest(workspace / "corpus" / "manifest.csv") if r.session == "test")
        wav = workspace / "corpus" / record.audio_path
        assert main(["identify", "--models", str(workspace / "models"), "--wav", str(wav), "--alpha", "0.3"]) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["alpha"] == 0.3
        assert result["gender"] in ("M", "F")
        assert result["speaker"] in result["speaker_scores"]
        assert set(result["gender_scores"]) == {"M", "F"}

    def test_evaluate_with_saved_models(self, workspace, tmp_path, capsys):
        out = tmp_path / "eval"
        argv = ["evaluate", "--config", str(workspace / "exp.json"), "--models", str(workspace / "models"), "--out", str(out)]
        assert main(argv) == EXIT_OK
        assert "speaker/shouted" in capsys.readouterr().out
        assert (out / "accuracy.csv").exists() and (out / "metadata.json").exists()

    def test_sweep(self, workspace, tmp_path):
        out = tmp_path / "sweep"
        argv = ["sweep-alpha", "--config", str(workspace / "exp.json"), "--alphas", "0,0.5,1", "--plot", "--out", str(out)]
        assert main(argv) == EXIT_OK
        assert len((out / "sweep.csv").read_text().splitlines()) == 4
        assert (out / "sweep.svg").read_text().startswith("<svg")

    def test_seed_changes_models(self, workspace, tmp_path):
        config = str(workspace / "exp.json")
        assert main(["train", "--config", config, "--out", str(tmp_path / "a"), "--seed", "1"]) == EXIT_OK
        assert main(["train", "--config", config, "--out", str(tmp_path / "b"), "--seed", "1"]) == EXIT_OK
        assert main(["train", "--config", config, "--out", str(tmp_path / "c"), "--seed", "2"]) == EXIT_OK
        a, b, c = (json.loads((tmp_path / d / "bundle.json").read_text()) for d in "abc")
        assert a == b
        assert a["model"]["seed"] == 1 and c["model"]["seed"] == 2
