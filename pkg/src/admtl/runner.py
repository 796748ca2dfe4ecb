"""Run configuration files, model construction, and checkpoint directories.

A run config is an INI file. Model keys use the hyperparameter names of the
original experiments in snake case::

    [model]
    variant = mtl_adversarial
    max_sentence_length = 60
    embedding_dimension = 200
    gru_hidden_state_dimension = 64
    attention_size = 350
    attention_aspect_size = 5
    hidden_neurons_feed_forward = 100
    activation = relu
    dropout_rate = 0.3
    output_activation = softmax
    optimizer = adam
    learning_rate = 0.001
    alpha = 1
    beta = 0.05

    [training]
    epochs = 30
    batch_size = 32
    pretrain_epochs = 2

    [run]
    seed = 13
    embedding_path =            ; optional word-vector text file

    [task:aimed]
    labels = non-interacting, interacting
    corpus = data/aimed.jsonl
    split = cv                  ; or fixed-test with test_corpus = ...

An optional ``[synthetic]`` section configures ``gen-synthetic``.
"""
import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import checkpoint
from .model import ConfigError, ModelConfig, MtlModel, build_vocabulary
from .text import TaskSpec, Vocabulary, load_pretrained_embeddings, read_corpus
from .trainer import TrainConfig

MANIFEST_VERSION = 1
CHECKPOINT_FILE = "checkpoint.bin"
MANIFEST_FILE = "manifest.json"

# fixed choices the config may restate but not change
_CONSTANTS = {"activation": "relu", "output_activation": "softmax", "optimizer": "adam"}


def _convert(cls, section, values, errors, skip=()):
    kinds = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in values.items():
        if key in skip:
            continue
        if key not in kinds:
            errors.append(f"[{section}] {key}: unknown key")
            continue
        kind = kinds[key]
        try:
            out[key] = kind(raw) if kind in (int, float, str) else raw
        except ValueError:
            errors.append(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}")
    return out


@dataclass
class RunConfig:
    model: ModelConfig
    training: TrainConfig
    tasks: list
    seed: int = 0
    embedding_path: str = None
    synthetic: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        with open(path, encoding="utf-8") as fh:
            try:
                parser.read_file(fh)
            except configparser.Error as exc:
                raise ConfigError([f"{path}: {exc.message}"]) from None
        return cls.from_parser(parser, os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_string(cls, text, base_dir="."):
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError([exc.message]) from None
        return cls.from_parser(parser, base_dir)

    @classmethod
    def from_parser(cls, parser, base_dir="."):
        errors = []
        model_values = dict(parser["model"]) if parser.has_section("model") else {}
        for key, want in _CONSTANTS.items():
            if key in model_values and model_values[key].strip().lower() != want:
                errors.append(f"[model] {key}: only {want!r} is supported, got {model_values[key]!r}")
        model_kwargs = _convert(ModelConfig, "model", model_values, errors, skip=_CONSTANTS.keys() | {"learning_rate"})
        train_values = dict(parser["training"]) if parser.has_section("training") else {}
        if "learning_rate" in model_values:
            train_values.setdefault("learning_rate", model_values["learning_rate"])
        train_kwargs = _convert(TrainConfig, "training", train_values, errors)
        run = dict(parser["run"]) if parser.has_section("run") else {}
        seed = 0
        try:
            seed = int(run.get("seed", 0))
        except ValueError:
            errors.append(f"[run] seed: cannot parse {run['seed']!r} as int")
        tasks = []
        for section in parser.sections():
            if not section.startswith("task:"):
                continue
            values = dict(parser[section])
            labels = [x.strip() for x in values.get("labels", "").split(",") if x.strip()]
            try:
                tasks.append(TaskSpec(section[5:], labels, values.get("corpus") or None,
                                      values.get("test_corpus") or None, values.get("split", "cv"),
                                      values.get("entity_token", "ENTITY")))
            except ValueError as exc:
                errors.append(f"[{section}] {exc}")
        variant = model_kwargs.get("variant", ModelConfig.variant)
        model = ModelConfig.for_variant(variant, **{k: v for k, v in model_kwargs.items() if k != "variant"})
        training = TrainConfig(**train_kwargs)
        if "seed" in train_kwargs and "seed" not in run:
            seed = training.seed
        training.seed = seed
        errors += [f"[model] {e}" for e in model.problems()]
        errors += [f"[training] {e}" for e in training.problems()]
        for spec in tasks:
            if spec.split == "fixed-test" and not spec.test_corpus:
                errors.append(f"[task:{spec.task_id}] split = fixed-test requires test_corpus")
        if errors:
            raise ConfigError(errors)
        synthetic = dict(parser["synthetic"]) if parser.has_section("synthetic") else {}
        return cls(model, training, tasks, seed, run.get("embedding_path") or None, synthetic, base_dir)

    def with_seed(self, seed):
        self.seed = seed
        self.training.seed = seed
        return self

    def resolve(self, path):
        return path if path is None or os.path.isabs(path) else os.path.join(self.base_dir, path)

    def require_tasks(self):
        if not self.tasks:
            raise ConfigError(["no [task:<id>] sections configured"])
        missing = [f"[task:{s.task_id}] corpus: required" for s in self.tasks if not s.corpus]
        if missing:
            raise ConfigError(missing)
        if not self.model.has_shared and len(self.tasks) != 1:
            raise ConfigError([f"[model] variant {self.model.variant!r} is single-task; "
                               f"configure exactly one task (got {len(self.tasks)})"])

    def load_corpora(self, which="train"):
        out = {}
        for spec in self.tasks:
            path = spec.corpus if which == "train" else (spec.test_corpus or spec.corpus)
            out[spec.task_id] = read_corpus(self.resolve(path), spec.labels)
        return out


def build_model(model_cfg, specs, corpora, rng, embedding_path=None):
    """Vocabulary over the training corpora, embeddings, and a fresh model."""
    aliases = {s.entity_token for s in specs}
    vocab = build_vocabulary([corpora[s.task_id] for s in specs if s.task_id in corpora], aliases)
    table = None
    if embedding_path:
        table = load_pretrained_embeddings(embedding_path, vocab, model_cfg.embedding_dimension, rng)
    return MtlModel(model_cfg, specs, vocab, rng, table)


def save_run(out_dir, model, run_cfg, extra=None):
    """Write checkpoint.bin and manifest.json; returns the checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, CHECKPOINT_FILE)
    blob = checkpoint.dumps({p.name: p.data for p in model.parameters()})
    with open(ckpt, "wb") as fh:
        fh.write(blob)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "checkpoint_format": checkpoint.FORMAT_VERSION,
        "checkpoint_sha256": hashlib.sha256(blob).hexdigest(),
        "variant": model.config.variant,
        "model": model.config.to_dict(),
        "training": run_cfg.training.to_dict() if run_cfg else None,
        "seed": run_cfg.seed if run_cfg else None,
        "tasks": [s.to_dict() for s in model.task_specs],
        "vocabulary": model.vocab.tokens,
        "entity_aliases": sorted(model.vocab.entity_aliases),
        "parameter_groups": {g: [p.name for p in ps] for g, ps in model.parameter_groups().items()},
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, MANIFEST_FILE), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ckpt


class ManifestMismatch(ValueError):
    pass


def load_run(checkpoint_path):
    """Rebuild a model from a checkpoint file (or its run directory) and the sibling manifest."""
    if os.path.isdir(checkpoint_path):
        checkpoint_path = os.path.join(checkpoint_path, CHECKPOINT_FILE)
    manifest_path = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), MANIFEST_FILE)
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = ModelConfig.from_dict(manifest["model"])
    specs = [TaskSpec(t["task_id"], t["labels"], t.get("corpus"), t.get("test_corpus"), t.get("split", "cv"),
                      t.get("entity_token", "ENTITY")) for t in manifest["tasks"]]
    tokens = manifest["vocabulary"]
    vocab = Vocabulary(tokens[3:], manifest.get("entity_aliases", ()))
    model = MtlModel(cfg, specs, vocab, np.random.default_rng(0))
    checkpoint.load_into(checkpoint_path, model.parameters())
    return model, manifest


def check_manifest(manifest, run_cfg):
    if manifest["variant"] != run_cfg.model.variant:
        raise ManifestMismatch(f"checkpoint variant {manifest['variant']!r} does not match "
                               f"config variant {run_cfg.model.variant!r}")
