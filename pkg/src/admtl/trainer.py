"""Adversarial multi-task training loop, Adam, and document-level cross-validation."""
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .evaluation import ConfusionMatrix, average_metrics, macro_prf
from .model import batch_loss, forward_task, discriminate, predict_proba
from .tensor import GradientTape, as_tensor, no_grad
from .text import make_batches

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    pretrain_epochs: int = 2
    validation_fraction: float = 0.1
    folds: int = 10
    seed: int = 0

    def problems(self):
        errors = []
        for name in ("batch_size", "folds"):
            if getattr(self, name) < 1:
                errors.append(f"{name}: must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "pretrain_epochs"):
            if getattr(self, name) < 0:
                errors.append(f"{name}: must be >= 0, got {getattr(self, name)}")
        for name in ("learning_rate", "adam_epsilon"):
            if not getattr(self, name) > 0:
                errors.append(f"{name}: must be > 0, got {getattr(self, name)}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                errors.append(f"{name}: must be in [0, 1), got {getattr(self, name)}")
        if not 0 <= self.validation_fraction < 1:
            errors.append(f"validation_fraction: must be in [0, 1), got {self.validation_fraction}")
        return errors

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    updates: dict = field(default_factory=dict)
    step: int = 0


def adam_step(grads, state, config):
    """Bias-corrected Adam on the parameters present in ``grads``.

    Parameters absent from ``grads`` (off this batch's path) keep their
    values and moments. Bias correction uses each parameter's own update
    count so lazily updated task heads are not over-corrected.
    """
    for p, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    for p, g in grads.items():
        if not p.trainable:
            continue
        if p.frozen_rows is not None and p.frozen_rows.any():
            g = np.where(p.frozen_rows.reshape((-1,) + (1,) * (g.ndim - 1)), 0.0, g)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        t = state.updates.get(p.name, 0) + 1
        state.updates[p.name] = t
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return state


def round_robin(streams):
    """Interleave per-task batch lists; exhausted tasks drop out."""
    iters = [iter(s) for s in streams]
    while iters:
        alive = []
        for it in iters:
            batch = next(it, None)
            if batch is not None:
                yield batch
                alive.append(it)
        iters = alive


def _task_batches(model, corpora, config, rng, shuffle=True):
    streams = []
    for spec in model.task_specs:
        examples = corpora.get(spec.task_id, [])
        if not examples:
            logger.warning("task %s has an empty corpus; skipped", spec.task_id)
            continue
        streams.append(make_batches(examples, config.batch_size, model.config.max_sentence_length, rng,
                                    model.vocab, spec.labels, spec.task_id, shuffle, spec.entity_token))
    return streams


def shared_features(model, batch):
    """SF for a batch computed without recording (encoder treated as constant)."""
    with no_grad():
        feature, _, _ = model.shared(model.embedding.data[batch.tokens], batch.mask)
    return feature.data


def pretrain_discriminator(model, corpora, config, rng, epochs=None):
    """Train only the discriminator on task identification of frozen SF.

    Returns per-epoch (loss, accuracy) statistics.
    """
    if len(model.task_specs) < 2:
        raise ValueError("discriminator pre-training needs at least 2 tasks")
    if model.discriminator is None:
        raise ValueError(f"variant {model.config.variant!r} has no discriminator")
    epochs = config.pretrain_epochs if epochs is None else epochs
    state = AdamState()
    d_params = model.discriminator.parameters()
    history = []
    for epoch in range(epochs):
        loss_sum, correct, seen = 0.0, 0, 0
        for batch in round_robin(_task_batches(model, corpora, config, rng)):
            sf = shared_features(model, batch)
            k = model.task_index[batch.task_id]
            with GradientTape() as tape:
                loss, probs = discriminate(sf, np.full(len(batch), k), model, reverse=False)
            adam_step(tape.backward(loss, d_params), state, config)
            loss_sum += loss.item()
            correct += int(np.sum(np.argmax(probs.data, axis=-1) == k))
            seen += len(batch)
        history.append({"epoch": epoch + 1, "loss": loss_sum / max(seen, 1), "accuracy": correct / max(seen, 1)})
    return history


def discriminator_accuracy(model, corpora, batch_size=64):
    """Accuracy of the current discriminator at naming each example's task."""
    correct = seen = 0
    for spec in model.task_specs:
        examples = corpora.get(spec.task_id, [])
        for s in range(0, len(examples), batch_size):
            batch = model.batch(examples[s:s + batch_size], spec.task_id)
            if batch is None:
                continue
            probs = model.discriminator(as_tensor(shared_features(model, batch))).data
            correct += int(np.sum(np.argmax(probs, axis=-1) == model.task_index[spec.task_id]))
            seen += len(batch)
    return correct / max(seen, 1)


def train_epoch(model, corpora, config, rng, state):
    """One pass over every task's batches, interleaved round-robin."""
    started = time.perf_counter()
    task_loss = {spec.task_id: 0.0 for spec in model.task_specs}
    task_seen = {spec.task_id: 0 for spec in model.task_specs}
    adv_sum, correct, adv_seen = 0.0, 0, 0
    for batch in round_robin(_task_batches(model, corpora, config, rng)):
        with GradientTape() as tape:
            total, ce, adv, hits = batch_loss(model, batch, "train", rng)
        adam_step(tape.backward(total), state, config)
        task_loss[batch.task_id] += ce.item()
        task_seen[batch.task_id] += len(batch)
        if adv is not None:
            adv_sum += adv.item()
            correct += hits
            adv_seen += len(batch)
    return {
        "task_loss": {t: task_loss[t] / task_seen[t] for t in task_loss if task_seen[t]},
        "adversarial_loss": adv_sum / adv_seen if adv_seen else None,
        "discriminator_accuracy": correct / adv_seen if adv_seen else None,
        "wall_time": time.perf_counter() - started,
    }


def evaluate_loss(model, corpora, batch_size=64):
    """Mean per-example task cross-entropy in inference mode."""
    total = seen = 0
    for spec in model.task_specs:
        examples = corpora.get(spec.task_id, [])
        for s in range(0, len(examples), batch_size):
            batch = model.batch(examples[s:s + batch_size], spec.task_id)
            if batch is None:
                continue
            probs = forward_task(batch, spec.task_id, model, "infer").probs.data
            total += -np.sum(batch.labels * np.log(np.maximum(probs, 1e-12)))
            seen += len(batch)
    return total / max(seen, 1)


def holdout_split(corpora, fraction, rng):
    """Per task, move a random ``fraction`` of examples into a validation set."""
    train, valid = {}, {}
    for task, examples in corpora.items():
        n_valid = int(round(fraction * len(examples)))
        order = rng.permutation(len(examples))
        held = set(order[:n_valid].tolist())
        train[task] = [ex for i, ex in enumerate(examples) if i not in held]
        valid[task] = [ex for i, ex in enumerate(examples) if i in held]
    return train, valid


def fit(model, corpora, config, rng=None, log=None):
    """Full training run: optional pre-training, epochs, best-validation restore.

    ``log`` is an optional writable text stream receiving one JSON record per
    epoch. Returns the list of epoch records.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    train, valid = corpora, {}
    if config.validation_fraction > 0:
        train, valid = holdout_split(corpora, config.validation_fraction, rng)
    history = []
    if model.discriminator is not None and config.pretrain_epochs > 0:
        if len(model.task_specs) < 2:
            logger.warning("single task: skipping discriminator pre-training")
        else:
            for rec in pretrain_discriminator(model, train, config, rng):
                rec = {"phase": "pretrain", **rec}
                history.append(rec)
                if log is not None:
                    log.write(json.dumps(rec, sort_keys=True) + "\n")
    state = AdamState()
    best, best_loss = None, np.inf
    has_valid = any(valid.values())
    for epoch in range(1, config.epochs + 1):
        rec = {"phase": "train", "epoch": epoch, **train_epoch(model, train, config, rng, state)}
        if has_valid:
            rec["validation_loss"] = evaluate_loss(model, valid)
            if rec["validation_loss"] < best_loss:
                best_loss, best = rec["validation_loss"], model.state()
        history.append(rec)
        if log is not None:
            log.write(json.dumps(rec, sort_keys=True) + "\n")
    if best is not None:
        model.load_state(best)
    return history


# -- cross-validation -------------------------------------------------------

@dataclass
class FoldPlan:
    folds: list  # [(train_docs, test_docs)] as frozensets

    def verify(self, documents):
        documents = set(documents)
        tests = [test for _, test in self.folds]
        union = set().union(*tests)
        if union != documents or sum(len(t) for t in tests) != len(documents):
            raise AssertionError("fold test sets do not partition the documents")
        for train, test in self.folds:
            if train & test or (train | test) != documents:
                raise AssertionError("fold train/test sets overlap or miss documents")
        return True


def build_fold_plan(document_ids, n_folds, rng):
    docs = sorted(set(document_ids))
    if len(docs) < n_folds:
        raise ValueError(f"{len(docs)} documents cannot fill {n_folds} folds; "
                         f"use a fold count <= {len(docs)}")
    order = rng.permutation(len(docs))
    parts = np.array_split(order, n_folds)
    universe = frozenset(docs)
    folds = []
    for part in parts:
        test = frozenset(docs[i] for i in part)
        folds.append((universe - test, test))
    return FoldPlan(folds)


@dataclass
class CrossValidationResult:
    plans: dict
    fold_metrics: dict   # task -> [TaskMetrics]
    aggregate: dict      # task -> averaged scores
    predictions: list    # dicts: example_id, task, fold, gold, pred

    def to_dict(self):
        return {
            "schema_version": 1,
            "folds": {task: [m.to_dict() for m in ms] for task, ms in self.fold_metrics.items()},
            "aggregate": self.aggregate,
        }


def run_cross_validation(corpora, task_specs, model_factory, config, n_folds=None):
    """Document-level k-fold CV for every task whose split mode is ``cv``.

    ``model_factory(train_corpora, rng)`` returns a fresh model. Tasks with a
    fixed test set join every fold's training data and are not scored here.
    Each fold draws its generator from a seed sequence spawned off
    ``config.seed`` so folds are independent of one another.
    """
    n_folds = n_folds or config.folds
    root = np.random.default_rng(config.seed)
    cv_tasks = [s for s in task_specs if s.split == "cv"]
    plans = {s.task_id: build_fold_plan([ex.document_id for ex in corpora[s.task_id]], n_folds, root)
             for s in cv_tasks}
    fold_seeds = np.random.SeedSequence(config.seed).spawn(n_folds)
    fold_metrics = {s.task_id: [] for s in cv_tasks}
    predictions = []
    for fold in range(n_folds):
        rng = np.random.default_rng(fold_seeds[fold])
        train, test = {}, {}
        for spec in task_specs:
            examples = corpora[spec.task_id]
            if spec.task_id in plans:
                train_docs, test_docs = plans[spec.task_id].folds[fold]
                train[spec.task_id] = [ex for ex in examples if ex.document_id in train_docs]
                test[spec.task_id] = [ex for ex in examples if ex.document_id in test_docs]
            else:
                train[spec.task_id] = list(examples)
        model = model_factory(train, rng)
        fit(model, train, config, rng)
        for spec in cv_tasks:
            examples = test[spec.task_id]
            probs, ids = predict_proba(model, examples, spec.task_id)
            gold_by_id = {ex.example_id: ex.label for ex in examples}
            preds = [spec.labels[int(i)] for i in np.argmax(probs, axis=-1)] if len(ids) else []
            golds = [gold_by_id[i] for i in ids]
            for eid, g, p in zip(ids, golds, preds):
                predictions.append({"example_id": eid, "task": spec.task_id, "fold": fold, "gold": g, "pred": p})
            fold_metrics[spec.task_id].append(macro_prf(ConfusionMatrix.from_labels(golds, preds, spec.labels)))
    aggregate = {task: average_metrics(ms) for task, ms in fold_metrics.items()}
    return CrossValidationResult(plans, fold_metrics, aggregate, predictions)
