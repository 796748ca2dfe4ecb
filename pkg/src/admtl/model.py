"""Shared/private multi-task relation classifier with an adversarial task discriminator."""
import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .attention import AttentionParameters, attend, mean_pool, multi_aspect_weights, redundancy_penalty
from .gru import BiGruParameters, bigru_encode, glorot_uniform
from .tensor import (Parameter, add, as_tensor, concat, cross_entropy, dropout, gradient_reversal,
                     matmul, relu, softmax, take_rows)
from .text import Vocabulary, collate, init_embeddings, prepare

logger = logging.getLogger(__name__)

VARIANTS = {
    # name: (private path, shared path, pooling, adversarial)
    "stl": (True, False, "mean", False),
    "stl_attention": (True, False, "single", False),
    "mtl_shared": (False, True, "single", False),
    "mtl_adversarial": (True, True, "multi", True),
    "mtl_adversarial_no_selfattn": (True, True, "mean", True),
    "mtl_no_adversarial": (True, True, "multi", False),
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class ModelConfig:
    variant: str = "mtl_adversarial"
    max_sentence_length: int = 60
    embedding_dimension: int = 200
    gru_hidden_state_dimension: int = 64
    attention_size: int = 350
    attention_aspect_size: int = 5
    hidden_neurons_feed_forward: int = 100
    dropout_rate: float = 0.3
    alpha: float = 1.0
    beta: float = 0.05
    grl_lambda: float = 1.0
    attention_penalty: float = 0.0

    @classmethod
    def for_variant(cls, variant, **overrides):
        """Config for ``variant`` with beta zeroed when it has no adversary."""
        if variant in VARIANTS and not VARIANTS[variant][3]:
            overrides.setdefault("beta", 0.0)
        return cls(variant=variant, **overrides)

    def problems(self):
        errors = []
        if self.variant not in VARIANTS:
            errors.append(f"variant: {self.variant!r} not one of {sorted(VARIANTS)}")
        for name in ("max_sentence_length", "embedding_dimension", "gru_hidden_state_dimension",
                     "attention_size", "attention_aspect_size", "hidden_neurons_feed_forward"):
            if getattr(self, name) < 1:
                errors.append(f"{name}: must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            errors.append(f"dropout_rate: must be in [0, 1), got {self.dropout_rate}")
        if not self.alpha > 0:
            errors.append(f"alpha: must be > 0, got {self.alpha}")
        if self.beta < 0:
            errors.append(f"beta: must be >= 0, got {self.beta}")
        elif self.variant in VARIANTS and (self.beta > 0) != VARIANTS[self.variant][3]:
            kind = "adversarial" if VARIANTS[self.variant][3] else "non-adversarial"
            errors.append(f"beta: {self.beta} inconsistent with {kind} variant {self.variant!r} "
                          "(beta = 0 exactly for variants without adversarial training)")
        if self.attention_penalty < 0:
            errors.append("attention_penalty: must be >= 0")
        return errors

    def validate(self):
        errors = self.problems()
        if errors:
            raise ConfigError(errors)
        return self

    @property
    def has_private(self):
        return VARIANTS[self.variant][0]

    @property
    def has_shared(self):
        return VARIANTS[self.variant][1]

    @property
    def pooling(self):
        return VARIANTS[self.variant][2]

    @property
    def adversarial(self):
        return VARIANTS[self.variant][3]

    @property
    def aspects(self):
        return self.attention_aspect_size if self.pooling == "multi" else 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Dense:
    def __init__(self, in_dim, out_dim, rng, name):
        self.w = Parameter(glorot_uniform(rng, in_dim, out_dim), f"{name}.w")
        self.b = Parameter(np.zeros(out_dim), f"{name}.b")

    def __call__(self, x):
        return add(matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


class Encoder:
    """Bi-GRU + pooling (attention or mean) + one relu projection layer."""

    def __init__(self, cfg, rng, prefix):
        d_h = 2 * cfg.gru_hidden_state_dimension
        self.pooling = cfg.pooling
        self.gru = BiGruParameters.init(cfg.embedding_dimension, cfg.gru_hidden_state_dimension, rng,
                                        f"{prefix}.gru")
        self.attention = None
        if cfg.pooling != "mean":
            self.attention = AttentionParameters.init(d_h, cfg.attention_size, cfg.aspects, rng,
                                                      f"{prefix}.attention")
        self.projection = Dense(d_h * cfg.aspects, cfg.hidden_neurons_feed_forward, rng,
                                f"{prefix}.projection")

    def __call__(self, x, mask):
        """Returns (feature, attention weights or None, hidden states)."""
        H = bigru_encode(x, mask, self.gru)
        if self.attention is None:
            return relu(self.projection(mean_pool(H, mask))), None, H
        V = multi_aspect_weights(H, self.attention, mask)
        return relu(self.projection(attend(H, V))), V, H

    def parameters(self):
        extra = self.attention.parameters() if self.attention else []
        return self.gru.parameters() + extra + self.projection.parameters()


class TaskHead:
    def __init__(self, spec, cfg, rng):
        self.spec = spec
        self.encoder = Encoder(cfg, rng, f"task.{spec.task_id}") if cfg.has_private else None
        width = cfg.hidden_neurons_feed_forward * (int(cfg.has_private) + int(cfg.has_shared))
        self.classifier = Dense(width, len(spec.labels), rng, f"task.{spec.task_id}.classifier")

    @property
    def labels(self):
        return self.spec.labels

    def parameters(self):
        own = self.encoder.parameters() if self.encoder else []
        return own + self.classifier.parameters()


class Discriminator:
    """One relu hidden layer, then softmax over the K tasks."""

    def __init__(self, in_dim, hidden, n_tasks, rng):
        self.hidden = Dense(in_dim, hidden, rng, "discriminator.hidden")
        self.output = Dense(hidden, n_tasks, rng, "discriminator.output")

    def __call__(self, feature):
        return softmax(self.output(relu(self.hidden(feature))), axis=-1)

    def parameters(self):
        return self.hidden.parameters() + self.output.parameters()


@dataclass
class ForwardResult:
    probs: object
    shared: Optional[object]
    attention: dict


class MtlModel:
    """Embedding table, optional shared encoder, per-task heads, optional discriminator."""

    def __init__(self, cfg, task_specs, vocab, rng, embeddings=None):
        cfg.validate()
        self.config = cfg
        self.vocab = vocab
        self.task_specs = list(task_specs)
        if not self.task_specs:
            raise ValueError("model needs at least one task")
        table = embeddings or init_embeddings(vocab, cfg.embedding_dimension, rng)
        if table.matrix.shape != (len(vocab), cfg.embedding_dimension):
            raise ValueError(f"embedding table {table.matrix.shape} != ({len(vocab)}, {cfg.embedding_dimension})")
        self.embedding = Parameter(table.matrix, "embedding", frozen_rows=table.frozen_rows)
        self.shared = Encoder(cfg, rng, "shared") if cfg.has_shared else None
        self.heads = {spec.task_id: TaskHead(spec, cfg, rng) for spec in self.task_specs}
        self.task_index = {spec.task_id: k for k, spec in enumerate(self.task_specs)}
        self.discriminator = None
        if cfg.adversarial:
            if len(self.task_specs) == 1:
                logger.warning("adversarial variant with a single task: discriminator output is constant")
            self.discriminator = Discriminator(cfg.hidden_neurons_feed_forward, cfg.hidden_neurons_feed_forward,
                                               len(self.task_specs), rng)

    # -- parameter bookkeeping ---------------------------------------------

    def parameter_groups(self):
        groups = {"embedding": [self.embedding]}
        if self.shared:
            groups["shared"] = self.shared.parameters()
        for tid, head in self.heads.items():
            groups[f"task:{tid}"] = head.parameters()
        if self.discriminator:
            groups["discriminator"] = self.discriminator.parameters()
        return groups

    def parameters(self):
        return [p for group in self.parameter_groups().values() for p in group]

    def state(self):
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state(self, state):
        for p in self.parameters():
            p.data[...] = state[p.name]

    def head(self, task_id):
        try:
            return self.heads[task_id]
        except KeyError:
            raise KeyError(f"unknown task {task_id!r}; model has {sorted(self.heads)}") from None

    def batch(self, examples, task_id):
        """Mask, window and collate examples for ``task_id`` (no shuffling)."""
        head = self.head(task_id)
        prepared = prepare(examples, self.config.max_sentence_length, head.spec.entity_token)
        return collate(prepared, self.vocab, head.labels, task_id) if prepared else None


def forward_task(batch, task_id, model, mode="infer", rng=None):
    """Class distribution for a batch of ``task_id``, plus SF and attention."""
    head = model.head(task_id)
    cfg = model.config
    x = take_rows(model.embedding, batch.tokens)
    features, attention, shared = [], {}, None
    if head.encoder is not None:
        tf, V, _ = head.encoder(x, batch.mask)
        features.append(tf)
        attention["private"] = V
    if model.shared is not None:
        shared, V, _ = model.shared(x, batch.mask)
        features.append(shared)
        attention["shared"] = V
    h = features[0] if len(features) == 1 else concat(features, axis=-1)
    h = dropout(h, cfg.dropout_rate, rng, training=(mode == "train"))
    return ForwardResult(softmax(head.classifier(h), axis=-1), shared, attention)


def task_loss(probs, gold):
    return cross_entropy(probs, gold)


def task_onehot(model, task_id, n):
    K = len(model.task_specs)
    k = model.task_index[task_id]
    out = np.zeros((n, K))
    out[:, k] = 1.0
    return out


def discriminate(shared_feature, task_labels, model, reverse=True):
    """Discriminator cross-entropy and its class distribution.

    ``task_labels`` are integer task indices, one per row. With ``reverse``
    the feature passes through the gradient reversal layer first.
    """
    if model.discriminator is None:
        raise ValueError(f"variant {model.config.variant!r} has no discriminator")
    K = len(model.task_specs)
    task_labels = np.asarray(task_labels)
    if np.any((task_labels < 0) | (task_labels >= K)):
        raise ValueError(f"task labels must lie in [0, {K}), got {task_labels.tolist()}")
    feature = gradient_reversal(shared_feature, model.config.grl_lambda) if reverse else as_tensor(shared_feature)
    probs = model.discriminator(feature)
    return cross_entropy(probs, np.eye(K)[task_labels]), probs


def adversarial_loss(shared_feature, task_labels, model, reverse=True):
    """Discriminator cross-entropy on gradient-reversed shared features."""
    return discriminate(shared_feature, task_labels, model, reverse)[0]


def total_loss(task_losses, adv_loss, alpha, beta):
    if not alpha > 0 or beta < 0:
        raise ValueError(f"need alpha > 0 and beta >= 0, got {alpha}, {beta}")
    ce = task_losses[0]
    for extra in task_losses[1:]:
        ce = add(ce, extra)
    total = alpha * as_tensor(ce)
    if adv_loss is not None and beta > 0:
        total = add(total, beta * as_tensor(adv_loss))
    return total


def batch_loss(model, batch, mode, rng):
    """alpha * L_CE + beta * L_adv (+ optional attention penalty) for one batch.

    Returns (total, ce, adv, discriminator_correct) where the last two are
    None for variants without an adversary.
    """
    cfg = model.config
    res = forward_task(batch, batch.task_id, model, mode, rng)
    ce = task_loss(res.probs, batch.labels)
    adv, correct = None, None
    if cfg.adversarial and cfg.beta > 0:
        k = model.task_index[batch.task_id]
        adv, d_probs = discriminate(res.shared, np.full(len(batch), k), model)
        correct = int(np.sum(np.argmax(d_probs.data, axis=-1) == k))
    total = total_loss([ce], adv, cfg.alpha, cfg.beta)
    if cfg.attention_penalty > 0:
        for V in res.attention.values():
            if V is not None:
                total = add(total, cfg.attention_penalty * redundancy_penalty(V))
    return total, ce, adv, correct


def predict_proba(model, examples, task_id):
    batch = model.batch(examples, task_id)
    if batch is None:
        return np.zeros((0, len(model.head(task_id).labels))), []
    return forward_task(batch, task_id, model, "infer").probs.data, batch.example_ids


def predict(example, task_id, model):
    """Most probable label; ties go to the lowest label index."""
    probs, _ = predict_proba(model, [example], task_id)
    if len(probs) == 0:
        raise ValueError(f"{example.example_id}: cannot be windowed to max sentence length")
    return model.head(task_id).labels[int(np.argmax(probs[0]))]


def argmax_label(probs):
    return int(np.argmax(probs))


def build_vocabulary(corpora, entity_aliases=()):
    """Vocabulary over masked tokens of all corpora, in first-seen order."""
    from .text import mask_entities
    seqs = (mask_entities(ex).tokens for corpus in corpora for ex in corpus)
    return Vocabulary.build(seqs, entity_aliases=entity_aliases)
