"""Corpus handling: tokenization, vocabulary, JSONL IO, encoding, and a
synthetic pattern-planting corpus generator.

All functions are pure with respect to their inputs; corpus generation and
vocabulary construction are deterministic (lexicographic ordering, seeded
RNG), so two runs over the same inputs produce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError

log = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_ALPHA_RE = re.compile(r"[a-z]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split into maximal [a-z0-9] runs, drop runs with no letter."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if _ALPHA_RE.search(t)]


def truncate(tokens: list[str], max_length: int) -> list[str]:
    """Keep the first ``max_length`` tokens."""
    if max_length < 1:
        raise ConfigError(f"max_length must be >= 1, got {max_length}")
    return tokens[:max_length]


@dataclass
class Document:
    """One input record: token sequence plus label set."""

    id: str
    tokens: list[str]
    labels: set[str]


@dataclass
class Vocabulary:
    """Token and label index maps. Indices 0/1 are reserved for PAD/UNK."""

    token_to_index: dict[str, int]
    index_to_token: list[str]
    label_to_index: dict[str, int]
    index_to_label: list[str]

    pad_index: int = PAD_INDEX
    unk_index: int = UNK_INDEX

    @property
    def num_tokens(self) -> int:
        return len(self.index_to_token)

    @property
    def num_labels(self) -> int:
        return len(self.index_to_label)

    def token_index(self, token: str) -> int:
        return self.token_to_index.get(token, self.unk_index)

    def checksum(self) -> str:
        """sha256 over the full token and label orderings."""
        h = hashlib.sha256()
        h.update("\n".join(self.index_to_token).encode("utf-8"))
        h.update(b"\0")
        h.update("\n".join(self.index_to_label).encode("utf-8"))
        return h.hexdigest()


@dataclass
class EncodedExample:
    id: str
    token_ids: np.ndarray  # int64, length n_i
    labels: np.ndarray  # float64 {0,1}, length num_labels


@dataclass
class EncodedDataset:
    examples: list[EncodedExample]
    split_tag: str  # train | dev | test
    num_labels: int
    dropped_labels: int = 0  # labels unseen at vocab-build time, dropped here

    def __len__(self) -> int:
        return len(self.examples)


def build_vocab(train_docs: list[Document], min_doc_freq: int = 3) -> Vocabulary:
    """Vocabulary of tokens appearing in >= min_doc_freq distinct training
    documents, plus PAD/UNK; label space is the sorted union of train labels."""
    if not train_docs:
        raise DataError("cannot build a vocabulary from an empty corpus")
    doc_freq: dict[str, int] = {}
    labels: set[str] = set()
    for doc in train_docs:
        for tok in set(doc.tokens):
            doc_freq[tok] = doc_freq.get(tok, 0) + 1
        labels.update(doc.labels)
    kept = sorted(t for t, c in doc_freq.items() if c >= min_doc_freq)
    if not kept:
        raise DataError(
            f"no token appears in >= {min_doc_freq} documents; lower min_doc_freq"
        )
    index_to_token = [PAD_TOKEN, UNK_TOKEN] + kept
    token_to_index = {t: i for i, t in enumerate(index_to_token)}
    index_to_label = sorted(labels)
    label_to_index = {lab: i for i, lab in enumerate(index_to_label)}
    return Vocabulary(token_to_index, index_to_token, label_to_index, index_to_label)


def encode(doc: Document, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray, int]:
    """Index-encode one document.

    Returns (token_ids, label_vector, dropped) where ``dropped`` counts the
    document's labels that are absent from the training label space.
    """
    ids = np.array([vocab.token_index(t) for t in doc.tokens], dtype=np.int64)
    y = np.zeros(vocab.num_labels, dtype=np.float64)
    dropped = 0
    for lab in doc.labels:
        j = vocab.label_to_index.get(lab)
        if j is None:
            dropped += 1
        else:
            y[j] = 1.0
    return ids, y, dropped


def encode_dataset(
    docs: list[Document], vocab: Vocabulary, split_tag: str
) -> EncodedDataset:
    """Encode a split. Training documents whose labels are all unseen are an
    error; dev/test documents may end up with empty label vectors."""
    examples = []
    total_dropped = 0
    for doc in docs:
        ids, y, dropped = encode(doc, vocab)
        total_dropped += dropped
        if split_tag == "train" and doc.labels and y.sum() == 0:
            raise DataError(
                f"training document {doc.id!r}: all labels unseen in label space"
            )
        examples.append(EncodedExample(doc.id, ids, y))
    if total_dropped:
        log.warning(
            "%s split: dropped %d label occurrences unseen in training",
            split_tag,
            total_dropped,
        )
    return EncodedDataset(examples, split_tag, vocab.num_labels, total_dropped)


# ---------------------------------------------------------------------------
# JSONL document IO
# ---------------------------------------------------------------------------


def load_jsonl(
    path, max_length: int | None = None, require_labels: bool = True
) -> list[Document]:
    """Read documents from JSONL ({"id", "text" or "tokens", "labels"}).

    Raw text is tokenized; pre-tokenized input is re-normalized through the
    same rule (idempotent for valid tokens).  Documents that are empty after
    preprocessing are rejected.  With ``require_labels=False`` (the predict
    path) a missing labels field is read as an empty label set.
    """
    docs = []
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{lineno}: malformed JSON ({e.msg})") from e
        if not isinstance(obj, dict) or "id" not in obj:
            raise DataError(f"{path}:{lineno}: missing 'id' field")
        if "labels" not in obj and require_labels:
            raise DataError(f"{path}:{lineno}: missing 'labels' field")
        if "tokens" in obj:
            text = " ".join(str(t) for t in obj["tokens"])
        elif "text" in obj:
            text = str(obj["text"])
        else:
            raise DataError(f"{path}:{lineno}: need either 'text' or 'tokens'")
        tokens = tokenize(text)
        if max_length is not None:
            tokens = truncate(tokens, max_length)
        if not tokens:
            raise DataError(
                f"{path}:{lineno}: document {obj['id']!r} is empty after preprocessing"
            )
        docs.append(
            Document(str(obj["id"]), tokens, set(map(str, obj.get("labels", []))))
        )
    return docs


def write_jsonl(docs: list[Document], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for doc in docs:
            rec = {"id": doc.id, "tokens": doc.tokens, "labels": sorted(doc.labels)}
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_encoded_jsonl(dataset: EncodedDataset, path) -> None:
    """Index-encoded split file: one {"id", "token_ids", "label_ids"} per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for ex in dataset.examples:
            rec = {
                "id": ex.id,
                "token_ids": ex.token_ids.tolist(),
                "label_ids": [int(j) for j in np.flatnonzero(ex.labels)],
            }
            f.write(json.dumps(rec) + "\n")


def load_encoded_jsonl(path, num_labels: int, split_tag: str) -> EncodedDataset:
    path = Path(path)
    examples = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            ids = np.array(obj["token_ids"], dtype=np.int64)
            y = np.zeros(num_labels, dtype=np.float64)
            for j in obj["label_ids"]:
                if not 0 <= j < num_labels:
                    raise DataError(
                        f"{path}:{lineno}: label index {j} out of range [0, {num_labels})"
                    )
                y[j] = 1.0
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
            if isinstance(e, DataError):
                raise
            raise DataError(f"{path}:{lineno}: malformed encoded record ({e})") from e
        examples.append(EncodedExample(str(obj["id"]), ids, y))
    return EncodedDataset(examples, split_tag, num_labels)


# ---------------------------------------------------------------------------
# Vocabulary files
# ---------------------------------------------------------------------------


def write_vocab(vocab: Vocabulary, tokens_path, labels_path) -> None:
    """Plain-text vocab files: line number = index (PAD/UNK occupy the first
    two lines of the token file); labels one per line in index order."""
    Path(tokens_path).write_text(
        "\n".join(vocab.index_to_token) + "\n", encoding="utf-8"
    )
    Path(labels_path).write_text(
        "\n".join(vocab.index_to_label) + "\n", encoding="utf-8"
    )


def read_vocab(tokens_path, labels_path) -> Vocabulary:
    try:
        tokens = Path(tokens_path).read_text(encoding="utf-8").splitlines()
        labels = Path(labels_path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read vocabulary files: {e}") from e
    if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != UNK_TOKEN:
        raise DataError(
            f"{tokens_path}: first two lines must be {PAD_TOKEN!r} and {UNK_TOKEN!r}"
        )
    return Vocabulary(
        token_to_index={t: i for i, t in enumerate(tokens)},
        index_to_token=tokens,
        label_to_index={lab: i for i, lab in enumerate(labels)},
        index_to_label=labels,
    )


# ---------------------------------------------------------------------------
# Synthetic corpus with planted label patterns
# ---------------------------------------------------------------------------


def _contains(tokens: list[str], pattern: tuple[str, ...], grams: dict) -> bool:
    length = len(pattern)
    if length not in grams:
        grams[length] = {
            tuple(tokens[i : i + length]) for i in range(len(tokens) - length + 1)
        }
    return pattern in grams[length]


def synth_corpus(
    num_docs: int,
    num_labels: int,
    pattern_lengths: list[int],
    vocab_size: int,
    doc_length: int,
    noise_rate: float,
    seed: int,
) -> tuple[list[Document], list[Document], list[Document]]:
    """Generate train/dev/test documents with planted label n-grams.

    Label j is tied to a fixed random n-gram of length
    ``pattern_lengths[j % len(pattern_lengths)]``.  A document carries label j
    iff that n-gram occurs contiguously in its final token sequence; with
    probability ``noise_rate`` a planted n-gram is corrupted (one token
    replaced), which usually removes the label again.  ``num_docs`` is the
    train-split size; dev/test are num_docs//10 and num_docs//5 (min 1).
    Document lengths vary uniformly between half of ``doc_length`` (at least
    the longest pattern) and ``doc_length``.  Pure function of ``seed``.
    """
    if num_labels < 2:
        raise ConfigError(f"num_labels must be >= 2, got {num_labels}")
    if not pattern_lengths or any(p < 1 for p in pattern_lengths):
        raise ConfigError("pattern_lengths values must be >= 1")
    max_pat = max(pattern_lengths)
    if doc_length < max_pat:
        raise ConfigError(
            f"doc_length {doc_length} < longest pattern length {max_pat}"
        )
    if vocab_size < 2:
        raise ConfigError("vocab_size must be >= 2")

    rng = np.random.default_rng(seed)
    width = max(3, len(str(vocab_size - 1)))
    universe = [f"w{i:0{width}d}" for i in range(vocab_size)]
    label_names = [f"L{j:03d}" for j in range(num_labels)]

    patterns: list[tuple[str, ...]] = []
    seen = set()
    for j in range(num_labels):
        length = pattern_lengths[j % len(pattern_lengths)]
        while True:
            pat = tuple(universe[i] for i in rng.integers(0, vocab_size, size=length))
            if pat not in seen:
                seen.add(pat)
                patterns.append(pat)
                break

    plant_prob = 0.3
    min_len = max(max_pat, doc_length // 2)

    def gen_doc(doc_id: str) -> Document:
        for attempt in range(20):
            length = int(rng.integers(min_len, doc_length + 1))
            toks = [universe[i] for i in rng.integers(0, vocab_size, size=length)]
            order = rng.permutation(num_labels)
            planting = rng.random(num_labels) < plant_prob
            if attempt == 19:  # last resort: guarantee one clean pattern
                planting[order[0]] = True
            occupied: list[tuple[int, int]] = []
            for j in order:
                if not planting[j]:
                    continue
                pat = patterns[j]
                span = len(pat)
                if span > length:
                    continue
                for _ in range(8):
                    start = int(rng.integers(0, length - span + 1))
                    if all(
                        start + span <= s or start >= e for s, e in occupied
                    ):
                        toks[start : start + span] = list(pat)
                        occupied.append((start, start + span))
                        if (
                            noise_rate > 0
                            and attempt < 19
                            and rng.random() < noise_rate
                        ):
                            pos = start + int(rng.integers(0, span))
                            toks[pos] = universe[int(rng.integers(0, vocab_size))]
                        break
            grams: dict = {}
            labels = {
                label_names[j]
                for j in range(num_labels)
                if _contains(toks, patterns[j], grams)
            }
            if labels:
                return Document(doc_id, toks, labels)
        raise NumericError("synthetic document generation failed to plant a label")

    splits = {
        "train": num_docs,
        "dev": max(1, num_docs // 10),
        "test": max(1, num_docs // 5),
    }
    out = []
    for tag, count in splits.items():
        out.append([gen_doc(f"{tag}-{i:05d}") for i in range(count)])
    return out[0], out[1], out[2]
