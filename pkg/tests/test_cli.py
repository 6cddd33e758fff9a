"""End-to-end CLI coverage on a tiny corpus: all five commands, exit
codes, manifests and atomicity."""

import json
import os

import numpy as np
import pytest

from altreco.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

SYNTH_SPEC = """
[synth]
num_users = 12
num_clusters = 3
num_images = 90
vocab_size = 16
feature_dim = 8
tags_per_image_min = 2
tags_per_image_max = 4
cluster_tag_affinity = 0.6
seed = 11
"""

TRAIN_CONFIG = """
[train]
batch_size = 10
max_steps = 8
seed = 11

[model]
visual_dim = 16
latent_dim = 4
visual_hidden = 16
encoder_widths = 32 16 8 4
decoder_widths = 4 8 16 32
classifier_widths = 16 16
generator_widths = 16 16 16
discriminator_widths = 32 16 8 4
"""


@pytest.fixture()
def workdir(tmp_path):
    spec = tmp_path / "synth.cfg"
    spec.write_text(SYNTH_SPEC)
    config = tmp_path / "train.cfg"
    config.write_text(TRAIN_CONFIG)
    return tmp_path


@pytest.fixture()
def corpus_dir(workdir):
    out = workdir / "corpus"
    assert main(["synth", str(workdir / "synth.cfg"), str(out)]) == EXIT_OK
    return out


@pytest.fixture()
def trained_dir(workdir, corpus_dir):
    out = workdir / "run"
    code = main([
        "train", str(corpus_dir), str(out),
        "--config", str(workdir / "train.cfg"), "--ablation", "A6",
    ])
    assert code == EXIT_OK
    return out


class TestSynth:
    def test_outputs_and_manifest(self, workdir, corpus_dir):
        for name in ("vocabulary.txt", "interactions.tsv", "features.bin", "manifest.json"):
            assert (corpus_dir / name).exists()
        manifest = json.loads((corpus_dir / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["seed"] == 11
        vocab_lines = (corpus_dir / "vocabulary.txt").read_text().splitlines()
        assert len(vocab_lines) == 16

    def test_reproducible_corpus_bytes(self, workdir, corpus_dir):
        again = workdir / "corpus2"
        assert main(["synth", str(workdir / "synth.cfg"), str(again)]) == EXIT_OK
        for name in ("vocabulary.txt", "interactions.tsv", "features.bin"):
            assert (again / name).read_bytes() == (corpus_dir / name).read_bytes()

    def test_invalid_spec_no_partial_output(self, workdir):
        bad = workdir / "bad.cfg"
        bad.write_text(SYNTH_SPEC.replace("num_clusters = 3", "num_clusters = 99"))
        out = workdir / "bad_corpus"
        assert main(["synth", str(bad), str(out)]) == EXIT_USAGE
        assert not out.exists() or not any(out.iterdir())

    def test_env_seed_override(self, workdir, corpus_dir, monkeypatch):
        monkeypatch.setenv("ALTRECO_SEED", "999")
        out = workdir / "corpus_env"
        assert main(["synth", str(workdir / "synth.cfg"), str(out)]) == EXIT_OK
        assert (out / "interactions.tsv").read_bytes() != (
            corpus_dir / "interactions.tsv").read_bytes()


class TestTrain:
    def test_writes_checkpoint_report_manifest(self, trained_dir):
        for name in ("checkpoint.bin", "train_report.txt", "manifest.json"):
            assert (trained_dir / name).exists()
        lines = (trained_dir / "train_report.txt").read_text().splitlines()
        assert any(line.startswith("0\tpersonalized\t") for line in lines)
        assert any(line.startswith("summary\t") for line in lines)

    def test_missing_corpus_file_names_it(self, workdir, corpus_dir, capsys):
        (corpus_dir / "features.bin").unlink()
        code = main(["train", str(corpus_dir), str(workdir / "run2"),
                     "--config", str(workdir / "train.cfg")])
        assert code == EXIT_DATA
        assert "features.bin" in capsys.readouterr().err

    def test_ablation_a1_flags(self, workdir, corpus_dir):
        out = workdir / "run_a1"
        code = main(["train", str(corpus_dir), str(out),
                     "--config", str(workdir / "train.cfg"), "--ablation", "A1"])
        assert code == EXIT_OK
        from altreco.checkpoint import load_model_checkpoint
        meta = load_model_checkpoint(out / "checkpoint.bin").train_meta
        assert meta["use_preference"] is False
        assert meta["adversarial_mode"] == "off"
        assert meta["joint_training"] is False

    def test_determinism_byte_identical(self, workdir, corpus_dir):
        outs = []
        for name in ("d1", "d2"):
            out = workdir / name
            code = main(["train", str(corpus_dir), str(out),
                         "--config", str(workdir / "train.cfg"),
                         "--ablation", "A6", "--seed", "21", "--max-steps", "6"])
            assert code == EXIT_OK
            outs.append(out)
        assert (outs[0] / "checkpoint.bin").read_bytes() == (outs[1] / "checkpoint.bin").read_bytes()
        assert (outs[0] / "train_report.txt").read_bytes() == (
            outs[1] / "train_report.txt").read_bytes()


class TestEval:
    def test_reports_requested_ks(self, workdir, corpus_dir, trained_dir, capsys):
        code = main(["eval", str(trained_dir / "checkpoint.bin"), str(corpus_dir),
                     "--ks", "3,5,10"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        data_rows = [l for l in out.splitlines() if l.strip() and not l.lstrip().startswith("k")]
        assert len(data_rows) == 3

    def test_cold_start_flag_changes_metrics(self, workdir, corpus_dir, trained_dir, capsys):
        assert main(["eval", str(trained_dir / "checkpoint.bin"), str(corpus_dir)]) == EXIT_OK
        warm = capsys.readouterr().out
        assert main(["eval", str(trained_dir / "checkpoint.bin"), str(corpus_dir),
                     "--cold-start"]) == EXIT_OK
        cold = capsys.readouterr().out
        assert warm != cold

    def test_same_inputs_identical_report(self, workdir, corpus_dir, trained_dir, capsys):
        assert main(["eval", str(trained_dir / "checkpoint.bin"), str(corpus_dir)]) == EXIT_OK
        first = capsys.readouterr().out
        assert main(["eval", str(trained_dir / "checkpoint.bin"), str(corpus_dir)]) == EXIT_OK
        assert capsys.readouterr().out == first

    def test_vocab_mismatch_is_explicit(self, workdir, corpus_dir, trained_dir, capsys):
        vocab = corpus_dir / "vocabulary.txt"
        vocab.write_text(vocab.read_text() + "extra-tag\n")
        code = main(["eval", str(trained_dir / "checkpoint.bin"), str(corpus_dir)])
        assert code == EXIT_DATA
        assert "tags" in capsys.readouterr().err


class TestRecommend:
    def test_topk_output(self, workdir, corpus_dir, trained_dir, capsys):
        image_id = (corpus_dir / "interactions.tsv").read_text().split("\t", 1)[0]
        code = main(["recommend", str(trained_dir / "checkpoint.bin"), str(corpus_dir),
                     "--image-id", image_id, "--history-tags", "tag001,tag002", "-k", "5"])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 5
        tags = [line.split("\t")[0] for line in lines]
        assert len(set(tags)) == 5

    def test_empty_history_matches_cold_start(self, workdir, corpus_dir, trained_dir, capsys):
        image_id = (corpus_dir / "interactions.tsv").read_text().split("\t", 1)[0]
        base = ["recommend", str(trained_dir / "checkpoint.bin"), str(corpus_dir),
                "--image-id", image_id, "-k", "5"]
        assert main(base) == EXIT_OK
        cold = capsys.readouterr().out
        assert main(base + ["--history-tags", ""]) == EXIT_OK
        assert capsys.readouterr().out == cold

    def test_unknown_history_tag_is_vocabulary_error(self, workdir, corpus_dir,
                                                     trained_dir, capsys):
        image_id = (corpus_dir / "interactions.tsv").read_text().split("\t", 1)[0]
        code = main(["recommend", str(trained_dir / "checkpoint.bin"), str(corpus_dir),
                     "--image-id", image_id, "--history-tags", "never-a-tag"])
        assert code == EXIT_DATA
        assert "never-a-tag" in capsys.readouterr().err

    def test_staged_histories_reproduce_dynamic_table(self, workdir, corpus_dir,
                                                      trained_dir, capsys):
        image_id = (corpus_dir / "interactions.tsv").read_text().split("\t", 1)[0]
        stage_outputs = []
        for stage in ("", "tag001", "tag001,tag002", "tag001,tag002,tag003"):
            args = ["recommend", str(trained_dir / "checkpoint.bin"), str(corpus_dir),
                    "--image-id", image_id, "-k", "5"]
            if stage:
                args += ["--history-tags", stage]
            assert main(args) == EXIT_OK
            stage_outputs.append(capsys.readouterr().out.strip().splitlines())
        assert all(len(stage) == 5 for stage in stage_outputs)


class TestAblate:
    def test_six_row_table(self, workdir, corpus_dir, capsys):
        out = workdir / "ablate"
        code = main(["ablate", str(corpus_dir), str(out),
                     "--config", str(workdir / "train.cfg"), "--max-steps", "4"])
        assert code == EXIT_OK
        table = (out / "ablations.txt").read_text().splitlines()
        names = [line.split()[0] for line in table[1:]]
        assert names == ["A1", "A2", "A3", "A4", "A5", "A6"]
        header = table[0]
        for column in ("UP", "Adv-I", "Adv-P", "Joint", "P@3", "R@5", "Acc@10"):
            assert column in header


class TestUsageErrors:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_config_file(self, workdir, corpus_dir, capsys):
        code = main(["train", str(corpus_dir), str(workdir / "x"),
                     "--config", str(workdir / "missing.cfg")])
        assert code == EXIT_USAGE
