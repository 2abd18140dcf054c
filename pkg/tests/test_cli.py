"""End-to-end command-line tests: tiny corpora, tiny models, real files."""

import json
from pathlib import Path

import numpy as np
import pytest

from sylcount.audio import save_wav
from sylcount.checkpoint import save_checkpoint
from sylcount.cli import main
from sylcount.envelope import load_calibration
from sylcount.evaluation import ExperimentReport, save_report
from sylcount.synth import SynthConfig, synthesize_utterance

TINY_NET = [
    "--set", "sylnet.n_layers=1",
    "--set", "sylnet.n_channels=3",
    "--set", "sylnet.accumulator_width=2",
    "--set", "sylnet.dropout_rate=0.0",
]
QUICK_TRAIN = [
    "--set", "train.max_epochs=2",
    "--set", "train.dropout_rate=0.0",
    "--set", "train.batch_size=8",
]


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    """Corpus, feature cache, tiny checkpoint and calibration built through
    the CLI itself."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    cache = root / "cache"
    models = root / "models"

    assert main([
        "synth", "--out-dir", str(corpus), "--seed", "31",
        "--set", "synth.n_utterances=24",
        "--set", "synth.min_count=1",
        "--set", "synth.max_count=3",
        "--set", "synth.burst_ms_lo=60",
        "--set", "synth.burst_ms_hi=100",
        "--set", "synth.gap_ms_lo=30",
        "--set", "synth.gap_ms_hi=60",
        "--set", "synth.n_speakers=3",
        "--set", "synth.name=clitest",
    ]) == 0
    assert main([
        "extract", "--manifest", str(corpus / "manifest.jsonl"), "--cache-dir", str(cache),
    ]) == 0
    assert main([
        "train", "--manifest", str(corpus / "manifest.jsonl"), "--cache-dir", str(cache),
        "--out", str(models / "tiny.npz"), "--val-fraction", "0.25", "--seed", "3",
        *TINY_NET, *QUICK_TRAIN,
    ]) == 0
    assert main([
        "calibrate", "--manifest", str(corpus / "manifest.jsonl"),
        "--out", str(models / "cal.json"),
    ]) == 0
    return root


def manifest_path(workspace):
    return str(workspace / "corpus" / "manifest.jsonl")


class TestWorkspaceArtifacts:
    def test_corpus_and_cache_exist(self, cli_workspace):
        assert (cli_workspace / "corpus" / "manifest.jsonl").exists()
        wavs = list((cli_workspace / "corpus" / "audio").glob("*.wav"))
        assert len(wavs) == 24
        assert (cli_workspace / "cache" / "extract.config.json").exists()
        assert len(list((cli_workspace / "cache").glob("*.melbin"))) == 24

    def test_train_writes_checkpoint_log_and_snapshot(self, cli_workspace):
        models = cli_workspace / "models"
        assert (models / "tiny.npz").exists()
        assert (models / "tiny.npz.json").exists()
        log_lines = (models / "tiny.trainlog.jsonl").read_text().splitlines()
        assert len(log_lines) == 2
        rec = json.loads(log_lines[0])
        assert set(rec) == {"epoch", "train_loss", "val_error_pct"}
        summary = json.loads((models / "tiny.summary.json").read_text())
        assert summary["n_epochs"] == 2
        assert summary["stop_reason"] in ("max_epochs", "early_stop", "target_reached")
        snapshot = json.loads((models / "tiny.config.json").read_text())
        assert snapshot["sylnet"]["n_layers"] == 1
        assert snapshot["train"]["seed"] == 3

    def test_calibration_artifact(self, cli_workspace):
        cal = load_calibration(cli_workspace / "models" / "cal.json")
        assert 0.0 <= cal.theta <= 1.0


class TestCount:
    def test_output_line_format(self, cli_workspace, capsys):
        wav = sorted((cli_workspace / "corpus" / "audio").glob("*.wav"))[0]
        rc = main(["count", "--checkpoint", str(cli_workspace / "models" / "tiny.npz"), str(wav)])
        assert rc == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1
        path, rounded, raw = out[0].split("\t")
        assert path == str(wav)
        assert rounded == str(int(np.floor(max(float(raw), 0.0) + 0.5)))

    def test_directory_expansion_recursive_lexicographic(self, cli_workspace, capsys):
        corpus = cli_workspace / "corpus"
        rc = main(["count", "--checkpoint", str(cli_workspace / "models" / "tiny.npz"), str(corpus)])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        paths = [line.split("\t")[0] for line in lines]
        assert paths == sorted(str(p) for p in corpus.rglob("*.wav"))
        assert len(paths) == 24

    def test_rerun_is_bit_identical(self, cli_workspace, capsys):
        wav = sorted((cli_workspace / "corpus" / "audio").glob("*.wav"))[:3]
        argv = ["count", "--checkpoint", str(cli_workspace / "models" / "tiny.npz"), *map(str, wav)]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first

    def test_out_file_matches_stdout(self, cli_workspace, capsys, tmp_path):
        wav = sorted((cli_workspace / "corpus" / "audio").glob("*.wav"))[0]
        out = tmp_path / "counts.tsv"
        rc = main([
            "count", "--checkpoint", str(cli_workspace / "models" / "tiny.npz"),
            "--out", str(out), str(wav),
        ])
        assert rc == 0
        assert out.read_text() == capsys.readouterr().out
        assert (tmp_path / "counts.config.json").exists()

    def test_unreadable_file_reports_and_fails(self, cli_workspace, capsys, tmp_path):
        missing = tmp_path / "ghost.wav"
        rc = main(["count", "--checkpoint", str(cli_workspace / "models" / "tiny.npz"), str(missing)])
        assert rc == 2
        assert str(missing) in capsys.readouterr().err

    def test_directory_without_wavs_rejected(self, cli_workspace, capsys, tmp_path):
        rc = main(["count", "--checkpoint", str(cli_workspace / "models" / "tiny.npz"), str(tmp_path)])
        assert rc == 2
        assert "no .wav files" in capsys.readouterr().err

    def test_empty_input_list_is_usage_error(self, cli_workspace, capsys):
        rc = main(["count", "--checkpoint", str(cli_workspace / "models" / "tiny.npz")])
        assert rc == 1
        assert "usage error" in capsys.readouterr().err

    def test_single_burst_through_trained_model_counts_one(
        self, trained_scalar, feature_config, tmp_path, capsys
    ):
        model, _, _ = trained_scalar
        ckpt = tmp_path / "scalar.npz"
        save_checkpoint(model, feature_config, ckpt)
        config = SynthConfig(
            n_utterances=1, min_count=1, max_count=1,
            burst_ms_lo=60.0, burst_ms_hi=120.0, gap_ms_lo=30.0, gap_ms_hi=60.0,
            n_speakers=5, seed=77, name="one",
        )
        samples, count, _ = synthesize_utterance(config, 0)
        assert count == 1
        wav = tmp_path / "one.wav"
        save_wav(wav, samples, config.sample_rate_hz)
        assert main(["count", "--checkpoint", str(ckpt), str(wav)]) == 0
        line = capsys.readouterr().out.strip()
        assert line.split("\t")[1] == "1"


class TestAdapt:
    def test_adapt_writes_new_checkpoint(self, cli_workspace, tmp_path, capsys):
        out = tmp_path / "adapted.npz"
        ids = tmp_path / "ids.txt"
        wavs = sorted((cli_workspace / "corpus" / "audio").glob("*.wav"))[:6]
        ids.write_text("".join(p.stem + "\n" for p in wavs))
        rc = main([
            "adapt", "--checkpoint", str(cli_workspace / "models" / "tiny.npz"),
            "--manifest", manifest_path(cli_workspace), "--ids", str(ids),
            "--cache-dir", str(cli_workspace / "cache"), "--out", str(out),
            "--seed", "4", *QUICK_TRAIN,
        ])
        assert rc == 0
        assert out.exists() and (tmp_path / "adapted.npz.json").exists()
        assert (tmp_path / "adapted.trainlog.jsonl").exists()

    def test_nan_checkpoint_is_numeric_failure(self, cli_workspace, tmp_path, capsys):
        src = cli_workspace / "models" / "tiny.npz"
        with np.load(src) as archive:
            arrays = {k: archive[k].copy() for k in archive.files}
        key = sorted(arrays)[0]
        arrays[key] = np.full_like(arrays[key], np.nan)
        bad = tmp_path / "bad.npz"
        with open(bad, "wb") as f:
            np.savez(f, **arrays)
        (tmp_path / "bad.npz.json").write_bytes((src.parent / "tiny.npz.json").read_bytes())
        rc = main([
            "adapt", "--checkpoint", str(bad),
            "--manifest", manifest_path(cli_workspace),
            "--cache-dir", str(cli_workspace / "cache"),
            "--out", str(tmp_path / "out.npz"), "--seed", "4", *QUICK_TRAIN,
        ])
        assert rc == 3
        assert "numeric failure" in capsys.readouterr().err


class TestEvaluate:
    def test_checkpoint_method(self, cli_workspace, tmp_path, capsys):
        out = tmp_path / "eval.json"
        rc = main([
            "evaluate", "--manifest", manifest_path(cli_workspace),
            "--checkpoint", str(cli_workspace / "models" / "tiny.npz"),
            "--cache-dir", str(cli_workspace / "cache"), "--out", str(out),
        ])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["n_utterances"] == 24
        assert len(doc["per_utterance"]) == 24
        assert doc["error_pct"] >= 0.0
        assert "relative error" in capsys.readouterr().out

    def test_calibration_method_with_id_subset(self, cli_workspace, tmp_path):
        ids = tmp_path / "ids.txt"
        wavs = sorted((cli_workspace / "corpus" / "audio").glob("*.wav"))[:5]
        ids.write_text("".join(p.stem + "\n" for p in wavs))
        out = tmp_path / "eval.json"
        rc = main([
            "evaluate", "--manifest", manifest_path(cli_workspace),
            "--calibration", str(cli_workspace / "models" / "cal.json"),
            "--ids", str(ids), "--out", str(out),
        ])
        assert rc == 0
        assert json.loads(out.read_text())["n_utterances"] == 5

    def test_checkpoint_without_cache_dir_rejected(self, cli_workspace, tmp_path, capsys):
        rc = main([
            "evaluate", "--manifest", manifest_path(cli_workspace),
            "--checkpoint", str(cli_workspace / "models" / "tiny.npz"),
            "--out", str(tmp_path / "eval.json"),
        ])
        assert rc == 2
        assert "--cache-dir" in capsys.readouterr().err

    def test_unknown_ids_rejected(self, cli_workspace, tmp_path, capsys):
        ids = tmp_path / "ids.txt"
        ids.write_text("ghost-0001\n")
        rc = main([
            "evaluate", "--manifest", manifest_path(cli_workspace),
            "--calibration", str(cli_workspace / "models" / "cal.json"),
            "--ids", str(ids), "--out", str(tmp_path / "eval.json"),
        ])
        assert rc == 2

    def test_requires_exactly_one_method(self, cli_workspace, tmp_path, capsys):
        rc = main([
            "evaluate", "--manifest", manifest_path(cli_workspace),
            "--out", str(tmp_path / "eval.json"),
        ])
        assert rc == 1


@pytest.fixture(scope="session")
def experiment_artifacts(cli_workspace, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("experiment")
    out = out_dir / "report.json"
    rc = main([
        "experiment", "--manifest", manifest_path(cli_workspace),
        "--cache-dir", str(cli_workspace / "cache"),
        "--method", f"net={cli_workspace / 'models' / 'tiny.npz'}",
        "--method", f"env={cli_workspace / 'models' / 'cal.json'}",
        "--out", str(out), "--seed", "5",
        "--set", "split.sizes_s=2,3",
        "--set", "split.folds=2",
        "--set", "split.test_fraction=0.3",
        "--set", "train.max_epochs=2",
        "--set", "train.dropout_rate=0.0",
        "--set", "train.batch_size=4",
    ])
    assert rc == 0
    return out_dir


class TestExperiment:
    def test_report_covers_every_cell(self, experiment_artifacts):
        doc = json.loads((experiment_artifacts / "report.json").read_text())
        cells = {(c["method"], c["size_label"], c["fold"]) for c in doc["cells"]}
        expected = {
            (m, label, fold)
            for m in ("net", "env")
            for label, fold in [("0s", -1), ("2s", 0), ("2s", 1), ("3s", 0), ("3s", 1)]
        }
        assert cells == expected
        assert all(
            c["error_pct"] is not None or c["failure"] for c in doc["cells"]
        )

    def test_sidecar_artifacts_written(self, experiment_artifacts):
        assert (experiment_artifacts / "report.csv").exists()
        assert (experiment_artifacts / "report.plan.json").exists()
        assert (experiment_artifacts / "report.config.json").exists()

    def test_bad_method_spec_rejected(self, cli_workspace, tmp_path, capsys):
        rc = main([
            "experiment", "--manifest", manifest_path(cli_workspace),
            "--cache-dir", str(cli_workspace / "cache"),
            "--method", "justapath.npz",
            "--out", str(tmp_path / "r.json"),
        ])
        assert rc == 2
        assert "NAME=PATH" in capsys.readouterr().err

    def test_duplicate_method_names_rejected(self, cli_workspace, tmp_path, capsys):
        ckpt = cli_workspace / "models" / "tiny.npz"
        rc = main([
            "experiment", "--manifest", manifest_path(cli_workspace),
            "--cache-dir", str(cli_workspace / "cache"),
            "--method", f"m={ckpt}", "--method", f"m={ckpt}",
            "--out", str(tmp_path / "r.json"),
        ])
        assert rc == 2
        assert "duplicate" in capsys.readouterr().err


class TestPlot:
    def test_report_plot_with_tabular_sidecar(self, experiment_artifacts, tmp_path, capsys):
        rc = main([
            "plot", "--report", str(experiment_artifacts / "report.json"),
            "--out-dir", str(tmp_path),
        ])
        assert rc == 0
        png = tmp_path / "report_curve.png"
        assert png.exists() and png.stat().st_size > 0
        csv_lines = (tmp_path / "report_curve.csv").read_text().splitlines()
        assert csv_lines[0].startswith("method,")
        assert len(csv_lines) > 1

    def test_trace_plot(self, cli_workspace, tmp_path):
        wav = sorted((cli_workspace / "corpus" / "audio").glob("*.wav"))[0]
        rc = main([
            "plot", "--trace-checkpoint", str(cli_workspace / "models" / "tiny.npz"),
            "--wav", str(wav), "--ref-count", "2", "--out-dir", str(tmp_path),
        ])
        assert rc == 0
        assert (tmp_path / f"{wav.stem}_trace.png").exists()
        trace_lines = (tmp_path / f"{wav.stem}_trace.csv").read_text().splitlines()
        assert trace_lines[0] == "frame,value"
        assert len(trace_lines) > 10

    def test_trace_without_wav_rejected(self, cli_workspace, tmp_path, capsys):
        rc = main([
            "plot", "--trace-checkpoint", str(cli_workspace / "models" / "tiny.npz"),
            "--out-dir", str(tmp_path),
        ])
        assert rc == 2
        assert "--wav" in capsys.readouterr().err

    def test_empty_report_rejected_without_image(self, tmp_path, capsys):
        report_path = tmp_path / "empty.json"
        save_report(ExperimentReport(corpus_name="c", seed=0), report_path)
        rc = main(["plot", "--report", str(report_path), "--out-dir", str(tmp_path)])
        assert rc == 2
        assert not list(tmp_path.glob("*.png"))


class TestUsageAndConfig:
    def test_unknown_subcommand(self, capsys):
        assert main(["discombobulate"]) == 1

    def test_missing_required_flag(self, capsys):
        assert main(["extract", "--manifest", "x.jsonl"]) == 1

    def test_unknown_config_key_rejected(self, cli_workspace, capsys):
        rc = main([
            "extract", "--manifest", manifest_path(cli_workspace),
            "--cache-dir", str(cli_workspace / "cache"),
            "--set", "train.warp_speed=9",
        ])
        assert rc == 2
        assert "unknown keys" in capsys.readouterr().err

    def test_seed_flag_lands_in_snapshot(self, cli_workspace, tmp_path):
        corpus = tmp_path / "seeded"
        rc = main([
            "synth", "--out-dir", str(corpus), "--seed", "41",
            "--set", "synth.n_utterances=2",
        ])
        assert rc == 0
        doc = json.loads((corpus / "synth.config.json").read_text())
        assert doc["synth"]["seed"] == 41
        assert doc["train"]["seed"] == 41
