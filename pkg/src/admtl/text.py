"""Corpus format, tokenization, entity masking, vocabulary, embeddings, batching."""
import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, ENTITY = "<pad>", "<unk>", "ENTITY"
PAD_ID, UNK_ID, ENTITY_ID = 0, 1, 2

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class CorpusFormatError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def tokenize(text):
    """Whitespace + punctuation split, lowercased. Reserved tokens survive."""
    out = []
    for piece in text.split():
        if piece == ENTITY:
            out.append(piece)
        else:
            out.extend(t.lower() for t in _TOKEN_RE.findall(piece))
    return out


@dataclass(frozen=True)
class RelationExample:
    example_id: str
    document_id: str
    task_id: str
    tokens: tuple
    entity1_span: tuple
    entity2_span: tuple
    label: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "entity1_span", tuple(int(i) for i in self.entity1_span))
        object.__setattr__(self, "entity2_span", tuple(int(i) for i in self.entity2_span))

    def validate(self, labels=None):
        n = len(self.tokens)
        for name, (s, e) in (("e1", self.entity1_span), ("e2", self.entity2_span)):
            if not 0 <= s < e <= n:
                raise CorpusFormatError(f"{self.example_id}: span {name}={[s, e]} invalid for {n} tokens")
        (s1, e1), (s2, e2) = self.entity1_span, self.entity2_span
        if s1 < e2 and s2 < e1:
            raise CorpusFormatError(f"{self.example_id}: entity spans overlap")
        if labels is not None and self.label not in labels:
            raise CorpusFormatError(f"{self.example_id}: label {self.label!r} not in {list(labels)}")
        return self

    def to_record(self):
        return {
            "id": self.example_id,
            "doc": self.document_id,
            "task": self.task_id,
            "tokens": list(self.tokens),
            "e1": list(self.entity1_span),
            "e2": list(self.entity2_span),
            "label": self.label,
        }

    @classmethod
    def from_record(cls, rec):
        try:
            return cls(rec["id"], rec["doc"], rec["task"], rec["tokens"], rec["e1"], rec["e2"], rec["label"])
        except KeyError as exc:
            raise CorpusFormatError(f"record missing field {exc}") from None


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    labels: tuple
    corpus: Optional[str] = None
    test_corpus: Optional[str] = None
    split: str = "cv"
    entity_token: str = ENTITY

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise ValueError(f"task {self.task_id}: label set needs at least 2 labels, got {list(self.labels)}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"task {self.task_id}: duplicate labels in {list(self.labels)}")
        if self.split not in ("cv", "fixed-test"):
            raise ValueError(f"task {self.task_id}: split must be 'cv' or 'fixed-test', got {self.split!r}")

    def to_dict(self):
        return {"task_id": self.task_id, "labels": list(self.labels), "corpus": self.corpus,
                "test_corpus": self.test_corpus, "split": self.split, "entity_token": self.entity_token}


def mask_entities(example, placeholder=ENTITY):
    """Collapse each entity span into a single ``placeholder`` token."""
    example.validate()
    spans = sorted([("e1", example.entity1_span), ("e2", example.entity2_span)], key=lambda s: s[1][0])
    tokens = list(example.tokens)
    out, new_spans, cursor = [], {}, 0
    for name, (s, e) in spans:
        out.extend(tokens[cursor:s])
        new_spans[name] = (len(out), len(out) + 1)
        out.append(placeholder)
        cursor = e
    out.extend(tokens[cursor:])
    return replace(example, tokens=tuple(out), entity1_span=new_spans["e1"], entity2_span=new_spans["e2"])


# -- corpus IO --------------------------------------------------------------

def read_corpus(path, labels=None):
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            try:
                examples.append(RelationExample.from_record(rec).validate(labels))
            except CorpusFormatError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
    return examples


def dumps_corpus(examples):
    return "".join(json.dumps(ex.to_record(), ensure_ascii=False) + "\n" for ex in examples)


def write_corpus(path, examples):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_corpus(examples))


# -- vocabulary and embeddings ----------------------------------------------

class Vocabulary:
    """Dense token index with PAD=0, UNK=1, ENTITY=2 always present."""

    def __init__(self, tokens=(), entity_aliases=()):
        self._itos = [PAD, UNK, ENTITY]
        self._stoi = {t: i for i, t in enumerate(self._itos)}
        self.entity_aliases = frozenset(entity_aliases) - {ENTITY}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token in self.entity_aliases:
            return ENTITY_ID
        if token not in self._stoi:
            self._stoi[token] = len(self._itos)
            self._itos.append(token)
        return self._stoi[token]

    @classmethod
    def build(cls, sequences, min_count=1, entity_aliases=()):
        counts = {}
        for seq in sequences:
            for t in seq:
                counts[t] = counts.get(t, 0) + 1
        # first-seen order keeps indices stable for a fixed corpus order
        return cls((t for t, c in counts.items() if c >= min_count), entity_aliases)

    def index(self, token):
        if token in self.entity_aliases:
            return ENTITY_ID
        return self._stoi.get(token, UNK_ID)

    def encode(self, tokens):
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def token(self, index):
        return self._itos[index]

    @property
    def tokens(self):
        return list(self._itos)

    def __len__(self):
        return len(self._itos)

    def __contains__(self, token):
        return token in self._stoi


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    trainable_rows: np.ndarray

    @property
    def dim(self):
        return self.matrix.shape[1]

    @property
    def frozen_rows(self):
        return ~self.trainable_rows


def _base_table(vocab, dim, rng):
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    matrix[PAD_ID] = 0.0
    matrix[ENTITY_ID] = 0.1
    trainable = np.ones(len(vocab), dtype=bool)
    trainable[[PAD_ID, ENTITY_ID]] = False
    return matrix, trainable


def init_embeddings(vocab, dim, rng):
    """Random table: Uniform(-0.05, 0.05), PAD zeros, ENTITY fixed at 0.1."""
    return EmbeddingTable(*_base_table(vocab, dim, rng))


def load_pretrained_embeddings(path, vocab, dim, rng):
    """Read a word-vector text file and build a table for ``vocab``.

    Every row is first drawn from the same distribution as
    :func:`init_embeddings`; rows for tokens found in the file are then
    overwritten, so out-of-vocabulary draws replay from the seed.
    """
    matrix, trainable = _base_table(vocab, dim, rng)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError("header must be '<count> <dim>'", 1)
        try:
            count, file_dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError("header must be '<count> <dim>'", 1) from None
        if file_dim != dim:
            raise ValueError(f"embedding file dimension {file_dim} != configured embedding_dimension {dim}")
        seen = 0
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(f"expected token + {dim} values, got {len(parts) - 1} values", lineno)
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError("non-numeric value", lineno) from None
            seen += 1
            token = parts[0]
            for cand in (token, token.lower()):
                if cand in vocab:
                    idx = vocab.index(cand)
                    if idx not in (PAD_ID, ENTITY_ID, UNK_ID):
                        matrix[idx] = vec
                    break
        if seen != count:
            logger.warning("embedding header declares %d vectors, read %d", count, seen)
    return EmbeddingTable(matrix, trainable)


# -- batching ---------------------------------------------------------------

@dataclass
class Batch:
    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    task_id: str
    example_ids: list = field(default_factory=list)

    def __len__(self):
        return self.tokens.shape[0]


def fit_window(example, max_len):
    """Truncate a masked example to ``max_len`` tokens keeping both entities.

    Returns None when the entities lie farther apart than ``max_len``.
    """
    n = len(example.tokens)
    if n <= max_len:
        return example
    lo = min(example.entity1_span[0], example.entity2_span[0])
    hi = max(example.entity1_span[1], example.entity2_span[1])
    if hi <= max_len:
        start = 0
    elif hi - lo > max_len:
        return None
    else:
        start = min(max(lo - (max_len - (hi - lo)) // 2, 0), n - max_len)
    shift = lambda span: (span[0] - start, span[1] - start)
    return replace(example, tokens=example.tokens[start:start + max_len],
                   entity1_span=shift(example.entity1_span), entity2_span=shift(example.entity2_span))


def prepare(examples, max_len, placeholder=ENTITY):
    """Mask and window a corpus; drops (with a warning) unrecoverable examples."""
    out = []
    for ex in examples:
        fitted = fit_window(mask_entities(ex, placeholder), max_len)
        if fitted is None:
            logger.warning("skipping %s: entities farther apart than max length %d", ex.example_id, max_len)
            continue
        out.append(fitted)
    return out


def collate(examples, vocab, labels, task_id):
    """Pad prepared examples into one Batch (width = longest example)."""
    width = max(len(ex.tokens) for ex in examples)
    tokens = np.zeros((len(examples), width), dtype=np.int64)
    mask = np.zeros((len(examples), width))
    onehot = np.zeros((len(examples), len(labels)))
    label_index = {lab: i for i, lab in enumerate(labels)}
    for row, ex in enumerate(examples):
        n = len(ex.tokens)
        tokens[row, :n] = vocab.encode(ex.tokens)
        mask[row, :n] = 1.0
        if ex.label in label_index:
            onehot[row, label_index[ex.label]] = 1.0
    return Batch(tokens, mask, onehot, task_id, [ex.example_id for ex in examples])


def make_batches(corpus, batch_size, max_len, rng, vocab, labels, task_id=None, shuffle=True, placeholder=ENTITY):
    """Shuffle, mask, window and pack a corpus into padded batches."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    prepared = prepare(corpus, max_len, placeholder)
    if not prepared:
        return []
    task_id = task_id or prepared[0].task_id
    order = rng.permutation(len(prepared)) if shuffle else np.arange(len(prepared))
    return [collate([prepared[i] for i in order[s:s + batch_size]], vocab, labels, task_id)
            for s in range(0, len(order), batch_size)]


# -- reference corpus statistics ----------------------------------------------

def corpus_statistics():
    """Class counts of the benchmark corpora, keyed by corpus name."""
    from importlib import resources
    return json.loads(resources.files("admtl").joinpath("data/corpus_stats.json").read_text(encoding="utf-8"))


def check_corpus_shape(examples, corpus, split="counts"):
    """Compare a converted corpus against the reference class counts.

    Returns a list of human-readable mismatches (empty when the label set
    and per-class counts agree). Labels the experiments drop are ignored.
    """
    stats = corpus_statistics()
    if corpus not in stats:
        raise KeyError(f"no reference statistics for {corpus!r}; have {sorted(stats)}")
    ref = stats[corpus]
    expected = {lab: n for lab, n in ref[split].items() if lab in ref["labels"]}
    seen = {}
    for ex in examples:
        seen[ex.label] = seen.get(ex.label, 0) + 1
    problems = [f"unexpected label {lab!r} ({n} examples)" for lab, n in sorted(seen.items()) if lab not in expected]
    for lab, n in expected.items():
        if seen.get(lab, 0) != n:
            problems.append(f"{lab}: expected {n} examples, found {seen.get(lab, 0)}")
    return problems
