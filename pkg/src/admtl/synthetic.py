"""Synthetic multi-task relation corpora with planted label cues.

Each example reads ``<left filler> E1 <middle> E2 <right filler>``. The label
is carried by cue tokens planted in the middle segment:

* a *shared* cue (``cue{label_index}_{m}``) means the same thing in every
  task, so knowledge transfers between tasks;
* a *private* cue (``{task}_cue{label_index}_{m}``) only occurs in one task.

A shared cue is planted with probability ``shared_cue_strength`` and a
private one with probability ``private_cue_strength``; when neither fires a
private cue is forced so the label is always recoverable. Filler words are
drawn from a common pool, except a ``task_vocab_fraction`` share that comes
from a per-task pool, which makes the source task identifiable.
"""
import configparser
from dataclasses import dataclass, field, fields

import numpy as np

from .text import RelationExample, TaskSpec

DEFAULT_LABELS = ("none", "activates", "inhibits")


@dataclass
class GeneratorConfig:
    tasks: tuple = ("task_a", "task_b")
    labels: dict = field(default_factory=dict)
    samples: tuple = (200, 200)
    vocab_size: int = 200
    private_vocab_size: int = 10
    task_vocab_fraction: float = 0.5
    shared_cue_strength: float = 0.8
    private_cue_strength: float = 0.5
    cues_per_label: int = 8
    max_context: int = 4
    min_gap: int = 2
    max_gap: int = 6
    examples_per_document: int = 5
    seed: int = 0

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        if isinstance(self.samples, int):
            self.samples = (self.samples,) * len(self.tasks)
        self.samples = tuple(int(s) for s in self.samples)
        self.labels = {t: tuple(self.labels.get(t, DEFAULT_LABELS)) for t in self.tasks}

    def validate(self):
        errors = []
        if not self.tasks:
            errors.append("tasks: at least one task required")
        if len(self.samples) != len(self.tasks):
            errors.append(f"samples: {len(self.samples)} counts for {len(self.tasks)} tasks")
        if any(s < 0 for s in self.samples):
            errors.append("samples: counts must be >= 0")
        for t, labs in self.labels.items():
            if len(labs) < 2:
                errors.append(f"labels.{t}: need at least 2 labels, got {list(labs)}")
        for name in ("shared_cue_strength", "private_cue_strength", "task_vocab_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                errors.append(f"{name}: must lie in [0, 1]")
        if self.vocab_size < 1 or self.private_vocab_size < 1 or self.cues_per_label < 1:
            errors.append("vocab_size, private_vocab_size and cues_per_label must be >= 1")
        if not 1 <= self.min_gap <= self.max_gap:
            errors.append("need 1 <= min_gap <= max_gap")
        if self.examples_per_document < 1:
            errors.append("examples_per_document must be >= 1")
        if errors:
            raise ValueError("invalid generator config: " + "; ".join(errors))
        return self

    def task_specs(self):
        return [TaskSpec(t, self.labels[t]) for t in self.tasks]

    @classmethod
    def from_mapping(cls, values):
        """Build from string key-values (an INI section)."""
        kwargs, labels = {}, {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key.startswith("labels."):
                labels[key.split(".", 1)[1]] = _split(raw)
            elif key == "labels":
                labels["*"] = _split(raw)
            elif key == "tasks":
                kwargs["tasks"] = tuple(_split(raw))
            elif key == "samples":
                kwargs["samples"] = tuple(int(s) for s in _split(raw))
            elif key in types:
                kwargs[key] = float(raw) if types[key] in (float, "float") else int(raw)
            else:
                raise ValueError(f"unknown generator key {key!r}")
        tasks = kwargs.get("tasks", cls.tasks)
        shared = labels.pop("*", None)
        kwargs["labels"] = {t: labels.get(t, shared or DEFAULT_LABELS) for t in tasks}
        if "samples" in kwargs and len(kwargs["samples"]) == 1:
            kwargs["samples"] = kwargs["samples"] * len(tasks)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, section="synthetic"):
        parser = configparser.ConfigParser()
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        return cls.from_mapping(dict(parser[section]) if parser.has_section(section) else {})


def _split(raw):
    return [p.strip() for p in raw.split(",") if p.strip()]


def _generate_task(k, task, labels, count, cfg, rng):
    examples = []
    for i in range(count):
        j = int(rng.integers(len(labels)))

        def filler(n):
            out = []
            for _ in range(n):
                if rng.random() < cfg.task_vocab_fraction:
                    out.append(f"{task}_w{rng.integers(cfg.private_vocab_size)}")
                else:
                    out.append(f"w{rng.integers(cfg.vocab_size)}")
            return out

        def mention():
            return [f"ent{rng.integers(1000)}" for _ in range(1 + int(rng.random() < 0.3))]

        left = filler(int(rng.integers(cfg.max_context + 1)))
        middle = filler(int(rng.integers(cfg.min_gap, cfg.max_gap + 1)))
        right = filler(int(rng.integers(cfg.max_context + 1)))
        cues = []
        if rng.random() < cfg.shared_cue_strength:
            cues.append(f"cue{j}_{rng.integers(cfg.cues_per_label)}")
        if rng.random() < cfg.private_cue_strength or not cues:
            cues.append(f"{task}_cue{j}_{rng.integers(cfg.cues_per_label)}")
        slots = rng.choice(len(middle), size=len(cues), replace=False)
        for slot, cue in zip(slots, cues):
            middle[slot] = cue
        e1, e2 = mention(), mention()
        tokens = left + e1 + middle + e2 + right
        s1 = len(left)
        s2 = s1 + len(e1) + len(middle)
        examples.append(RelationExample(
            example_id=f"{task}-{i:05d}",
            document_id=f"{task}-d{i // cfg.examples_per_document:04d}",
            task_id=task,
            tokens=tokens,
            entity1_span=(s1, s1 + len(e1)),
            entity2_span=(s2, s2 + len(e2)),
            label=labels[j],
        ))
    return examples


def generate_synthetic_tasks(cfg, rng=None):
    """Generate one corpus per configured task (seeded by ``cfg.seed`` unless
    an explicit Generator is passed)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return [_generate_task(k, t, cfg.labels[t], cfg.samples[k], cfg, rng) for k, t in enumerate(cfg.tasks)]


def split_by_documents(examples, test_fraction, rng):
    """Split a corpus into (train, test) along document boundaries."""
    docs = sorted({ex.document_id for ex in examples})
    order = rng.permutation(len(docs))
    n_test = int(round(test_fraction * len(docs)))
    test_docs = {docs[i] for i in order[:n_test]}
    train = [ex for ex in examples if ex.document_id not in test_docs]
    test = [ex for ex in examples if ex.document_id in test_docs]
    return train, test
