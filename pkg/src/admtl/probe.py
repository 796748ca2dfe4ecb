"""Linear probe for how much task identity the shared features carry.

A softmax-regression classifier is trained from scratch on frozen features of
one half of the examples and scored on the other half. Held-out accuracy near
chance means the features hide which task an example came from.
"""
from dataclasses import dataclass

import numpy as np

from .tensor import GradientTape, Parameter, as_tensor, cross_entropy, matmul, softmax
from .trainer import AdamState, TrainConfig, adam_step, shared_features


@dataclass
class ProbeResult:
    train_accuracy: float
    test_accuracy: float
    chance: float


def collect_shared_features(model, corpora, batch_size=64):
    """Frozen SF rows and the task index of each row."""
    if model.shared is None:
        raise ValueError(f"variant {model.config.variant!r} has no shared encoder")
    feats, tasks = [], []
    for spec in model.task_specs:
        examples = corpora.get(spec.task_id, [])
        for s in range(0, len(examples), batch_size):
            batch = model.batch(examples[s:s + batch_size], spec.task_id)
            if batch is None:
                continue
            feats.append(shared_features(model, batch))
            tasks.append(np.full(len(batch), model.task_index[spec.task_id]))
    return np.concatenate(feats), np.concatenate(tasks)


def probe_task_identity(features, tasks, rng, steps=300, learning_rate=0.05, train_fraction=0.5):
    """Fit a fresh softmax-regression probe and report held-out accuracy.

    Features are standardised with training-half statistics. Chance is the
    majority-task share of the test half.
    """
    features = np.asarray(features, dtype=np.float64)
    tasks = np.asarray(tasks)
    n, K = len(tasks), int(tasks.max()) + 1
    if K < 2:
        raise ValueError("probe needs features from at least 2 tasks")
    order = rng.permutation(n)
    cut = int(round(train_fraction * n))
    tr, te = order[:cut], order[cut:]
    mu = features[tr].mean(axis=0)
    sd = features[tr].std(axis=0) + 1e-8
    X = (features - mu) / sd
    W = Parameter(rng.normal(0.0, 0.01, (X.shape[1], K)), "probe.W")
    b = Parameter(np.zeros(K), "probe.b")
    onehot = np.eye(K)[tasks[tr]]
    state = AdamState()
    cfg = TrainConfig(learning_rate=learning_rate)
    for _ in range(steps):
        with GradientTape() as tape:
            probs = softmax(matmul(as_tensor(X[tr]), W) + b, axis=-1)
            loss = cross_entropy(probs, onehot) * (1.0 / len(tr))
        adam_step(tape.backward(loss, [W, b]), state, cfg)

    def accuracy(idx):
        return float(np.mean(np.argmax(X[idx] @ W.data + b.data, axis=-1) == tasks[idx]))

    chance = float(np.bincount(tasks[te], minlength=K).max() / len(te))
    return ProbeResult(accuracy(tr), accuracy(te), chance)
