import json

import pytest

from admtl.cli import main
from admtl.text import read_corpus

CONFIG = """\
[model]
variant = {variant}
max_sentence_length = 40
embedding_dimension = 16
gru_hidden_state_dimension = 8
attention_size = 12
attention_aspect_size = 2
hidden_neurons_feed_forward = 16
learning_rate = 0.01
{extra}

[training]
epochs = {epochs}
batch_size = 16

[run]
seed = 3

[synthetic]
samples = {samples}
{synthetic}

{tasks}
"""

TWO_TASKS = """\
[task:a]
labels = none, activates, inhibits
corpus = data/a.jsonl

[task:b]
labels = no, yes
corpus = data/b.jsonl
"""


def write_config(directory, variant="mtl_adversarial", epochs=3, samples=60, tasks=TWO_TASKS, extra="",
                 synthetic="", name="run.ini"):
    path = directory / name
    path.write_text(CONFIG.format(variant=variant, epochs=epochs, samples=samples, tasks=tasks, extra=extra,
                                  synthetic=synthetic), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = write_config(root)
    assert main(["gen-synthetic", "--config", config]) == 0
    out = root / "run"
    assert main(["train", "--config", config, "--out", str(out)]) == 0
    return root, config, out


class TestGenSynthetic:
    def test_default_writes_two_corpora(self, tmp_path):
        assert main(["gen-synthetic", "--out", str(tmp_path)]) == 0
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == ["task_a.jsonl", "task_b.jsonl"]
        assert all(read_corpus(tmp_path / f) for f in files)

    def test_same_seed_same_bytes(self, tmp_path):
        for d in ("one", "two"):
            assert main(["gen-synthetic", "--seed", "9", "--out", str(tmp_path / d)]) == 0
        for name in ("task_a.jsonl", "task_b.jsonl"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_uses_configured_tasks_and_paths(self, tmp_path):
        config = write_config(tmp_path)
        assert main(["gen-synthetic", "--config", config]) == 0
        a = read_corpus(tmp_path / "data" / "a.jsonl", ["none", "activates", "inhibits"])
        b = read_corpus(tmp_path / "data" / "b.jsonl", ["no", "yes"])
        assert len(a) == len(b) == 60 and {ex.task_id for ex in b} == {"b"}


class TestTrain:
    def test_outputs(self, trained):
        _, _, out = trained
        assert {p.name for p in out.iterdir()} == {"train_log.jsonl", "checkpoint.bin", "manifest.json"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["variant"] == "mtl_adversarial" and "discriminator" in manifest["parameter_groups"]
        recs = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
        assert [r["phase"] for r in recs] == ["pretrain", "pretrain", "train", "train", "train"]
        for r in recs[2:]:
            assert {"task_loss", "adversarial_loss", "discriminator_accuracy", "wall_time"} <= set(r)

    def test_stl_has_no_discriminator(self, tmp_path):
        tasks = "[task:a]\nlabels = none, activates, inhibits\ncorpus = data/a.jsonl\n"
        config = write_config(tmp_path, variant="stl", epochs=1, tasks=tasks)
        assert main(["gen-synthetic", "--config", config]) == 0
        assert main(["train", "--config", config, "--out", str(tmp_path / "o")]) == 0
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert set(manifest["parameter_groups"]) == {"embedding", "task:a"}
        recs = [json.loads(line) for line in (tmp_path / "o" / "train_log.jsonl").read_text().splitlines()]
        assert recs[0]["phase"] == "train" and recs[0]["discriminator_accuracy"] is None

    def test_discriminator_moves_toward_chance_after_pretraining(self, tmp_path):
        # one task shares no vocabulary with the other so SF starts out task-identifiable
        config = write_config(tmp_path, epochs=10, samples=150,
                              synthetic="task_vocab_fraction = 1.0\nprivate_vocab_size = 5")
        assert main(["gen-synthetic", "--config", config]) == 0
        assert main(["train", "--config", config, "--out", str(tmp_path / "o")]) == 0
        recs = [json.loads(line) for line in (tmp_path / "o" / "train_log.jsonl").read_text().splitlines()]
        peak = max(r["accuracy"] for r in recs if r["phase"] == "pretrain")
        final = [r["discriminator_accuracy"] for r in recs if r["phase"] == "train"][-3:]
        assert abs(sum(final) / 3 - 0.5) < abs(peak - 0.5)

    def test_config_errors_list_every_field(self, tmp_path, capsys):
        config = write_config(tmp_path, extra="dropout_rate = 2\nalpha = 0\nbogus = 1")
        assert main(["train", "--config", config, "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        for field in ("dropout_rate", "alpha", "bogus"):
            assert field in err
        assert not (tmp_path / "o").exists()

    def test_malformed_file_is_a_config_error(self, tmp_path, capsys):
        config = write_config(tmp_path, extra="embedding_dimension = 4")
        assert main(["train", "--config", config, "--out", str(tmp_path / "o")]) == 2
        assert "embedding_dimension" in capsys.readouterr().err

    def test_missing_corpus(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["train", "--config", config, "--out", str(tmp_path / "o")]) == 3
        assert "a.jsonl" in capsys.readouterr().err

    def test_same_seed_identical_checkpoint(self, trained, tmp_path):
        root, config, out = trained
        assert main(["train", "--config", config, "--out", str(tmp_path / "again")]) == 0
        assert (tmp_path / "again" / "checkpoint.bin").read_bytes() == (out / "checkpoint.bin").read_bytes()


class TestEvaluate:
    def test_metrics_and_pr_files(self, trained, tmp_path):
        root, config, out = trained
        assert main(["evaluate", "--config", config, "--checkpoint", str(out / "checkpoint.bin"),
                     "--out", str(tmp_path)]) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["schema_version"] == 1 and set(metrics["tasks"]) == {"a", "b"}
        assert (tmp_path / "pr_b.csv").read_text().startswith("recall,precision\n")
        assert not (tmp_path / "pr_a.csv").exists()

    def test_overfit_model_scores_perfectly_on_its_training_data(self, tmp_path):
        tasks = "[task:a]\nlabels = none, activates, inhibits\ncorpus = data/a.jsonl\n"
        config = write_config(tmp_path, variant="stl_attention", epochs=40, samples=30, tasks=tasks,
                              synthetic="private_cue_strength = 1.0")
        text = open(config).read().replace("batch_size = 16", "batch_size = 8\nvalidation_fraction = 0")
        open(config, "w").write(text)
        assert main(["gen-synthetic", "--config", config]) == 0
        assert main(["train", "--config", config, "--out", str(tmp_path / "o")]) == 0
        assert main(["evaluate", "--config", config, "--checkpoint", str(tmp_path / "o" / "checkpoint.bin"),
                     "--corpus", str(tmp_path / "data" / "a.jsonl"), "--task", "a", "--out",
                     str(tmp_path / "ev")]) == 0
        metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
        assert metrics["tasks"]["a"]["macro"]["f1"] == 1.0

    def test_variant_mismatch(self, trained, tmp_path, capsys):
        _, _, out = trained
        other = write_config(tmp_path, variant="mtl_no_adversarial")
        assert main(["evaluate", "--config", other, "--checkpoint", str(out / "checkpoint.bin"),
                     "--out", str(tmp_path / "ev")]) == 4
        err = capsys.readouterr().err
        assert "mtl_adversarial" in err and "mtl_no_adversarial" in err


def test_cross_validate_twenty_documents(tmp_path):
    tasks = "[task:a]\nlabels = none, activates, inhibits\ncorpus = data/a.jsonl\n\n" \
            "[task:b]\nlabels = no, yes\ncorpus = data/b.jsonl\nsplit = fixed-test\ntest_corpus = data/b.jsonl\n"
    config = write_config(tmp_path, epochs=1, samples=100, tasks=tasks, synthetic="examples_per_document = 5")
    assert main(["gen-synthetic", "--config", config]) == 0
    assert len({ex.document_id for ex in read_corpus(tmp_path / "data" / "a.jsonl")}) == 20
    assert main(["cross-validate", "--config", config, "--out", str(tmp_path / "cv")]) == 0
    report = json.loads((tmp_path / "cv" / "cv_metrics.json").read_text())
    assert set(report["folds"]) == {"a"} and len(report["folds"]["a"]) == 10
    assert report["aggregate"]["a"]["folds"] == 10
    preds = [json.loads(line) for line in (tmp_path / "cv" / "cv_predictions.jsonl").read_text().splitlines()]
    assert sorted(p["example_id"] for p in preds) == sorted(ex.example_id for ex in
                                                             read_corpus(tmp_path / "data" / "a.jsonl"))


def test_predict_line_count(trained, tmp_path):
    root, _, out = trained
    corpus = root / "data" / "b.jsonl"
    assert main(["predict", "--checkpoint", str(out / "checkpoint.bin"), "--corpus", str(corpus),
                 "--out", str(tmp_path / "p.jsonl")]) == 0
    lines = (tmp_path / "p.jsonl").read_text().splitlines()
    assert len(lines) == len(read_corpus(corpus))
    rec = json.loads(lines[0])
    assert rec["label"] in ("no", "yes") and sum(rec["probabilities"].values()) == pytest.approx(1.0)


def test_export_attention(trained, tmp_path):
    root, _, out = trained
    corpus = root / "data" / "a.jsonl"
    first = read_corpus(corpus)[0]
    for name in ("h1.csv", "h2.csv"):
        assert main(["export-attention", "--checkpoint", str(out / "checkpoint.bin"), "--corpus", str(corpus),
                     "--example-id", first.example_id, "--path", "shared", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "h1.csv").read_bytes() == (tmp_path / "h2.csv").read_bytes()
    assert main(["export-attention", "--checkpoint", str(out / "checkpoint.bin"), "--corpus", str(corpus),
                 "--example-id", "nope", "--out", str(tmp_path / "h3.csv")]) == 3


def test_inputs_are_not_mutated(trained, tmp_path):
    root, config, out = trained
    before = (root / "data" / "a.jsonl").read_bytes()
    main(["evaluate", "--config", config, "--checkpoint", str(out / "checkpoint.bin"), "--out", str(tmp_path)])
    assert (root / "data" / "a.jsonl").read_bytes() == before


def test_checkpoint_directory_accepted(trained, tmp_path):
    root, config, out = trained
    assert main(["evaluate", "--config", config, "--checkpoint", str(out), "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "metrics.json").exists()
