"""Word embedding matrix: text-format loader plus a minimal skip-gram
pretrainer with negative sampling.

The text format is the conventional one: a header line ``count dim`` followed
by one ``token v1 ... v_dim`` line per word.  Vectors are written with 9
significant digits, so a write/load round trip is accurate to well under
1e-6.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .numerics import sigmoid_ew
from .pipeline import Vocabulary

log = logging.getLogger(__name__)

INIT_RANGE = 0.1  # uniform init half-width for tokens missing from the file


@dataclass
class EmbeddingMatrix:
    """|vocab| x d_e embedding rows. The PAD row is zero and stays zero."""

    rows: np.ndarray
    source_tag: str  # "pretrained" | "random"
    covered: int = 0  # vocab tokens found in the embedding file
    total: int = 0  # vocab tokens excluding PAD/UNK

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def coverage_line(self) -> str:
        pct = 100.0 * self.covered / self.total if self.total else 0.0
        return f"{self.covered}/{self.total} ({pct:.1f}%)"


def random_embeddings(vocab: Vocabulary, d_e: int, seed: int) -> EmbeddingMatrix:
    """Uniform +-INIT_RANGE rows for every token except the zero PAD row."""
    rng = np.random.default_rng(seed)
    rows = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(vocab.num_tokens, d_e))
    rows[vocab.pad_index] = 0.0
    return EmbeddingMatrix(rows, "random", covered=0, total=vocab.num_tokens - 2)


def load_text_embeddings(
    path, vocab: Vocabulary, d_e: int, seed: int = 0
) -> EmbeddingMatrix:
    """Assemble the embedding matrix for ``vocab`` from a text embedding file.

    Tokens found in the file take the file vector; missing tokens and UNK are
    initialized uniform in +-INIT_RANGE from ``seed``; the PAD row is zeroed.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read embeddings {path}: {e}") from e
    if not lines:
        raise DataError(f"{path}: empty embedding file")
    header = lines[0].split()
    if len(header) != 2:
        raise DataError(f"{path}:1: header must be 'count dim', got {lines[0]!r}")
    try:
        count, dim = int(header[0]), int(header[1])
    except ValueError as e:
        raise DataError(f"{path}:1: header must be 'count dim'") from e
    if dim != d_e:
        raise DataError(
            f"{path}: embedding dim {dim} does not match requested d_e={d_e}"
        )

    emb = random_embeddings(vocab, d_e, seed)
    covered = 0
    for lineno, line in enumerate(lines[1 : count + 1], start=2):
        parts = line.rstrip("\n").split(" ")
        if len(parts) != dim + 1:
            raise DataError(
                f"{path}:{lineno}: expected token plus {dim} floats, got "
                f"{len(parts) - 1} values"
            )
        token = parts[0]
        try:
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: unparsable float ({e})") from e
        idx = vocab.token_to_index.get(token)
        if idx is not None and idx >= 2:
            emb.rows[idx] = vec
            covered += 1
    emb.rows[vocab.pad_index] = 0.0
    emb.source_tag = "pretrained"
    emb.covered = covered
    log.info("embedding coverage: %s", emb.coverage_line())
    return emb


def write_text_embeddings(tokens: list[str], rows: np.ndarray, path) -> None:
    if len(tokens) != rows.shape[0]:
        raise ValueError(
            f"{len(tokens)} tokens but {rows.shape[0]} embedding rows"
        )
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(f"{len(tokens)} {rows.shape[1]}\n")
        for tok, vec in zip(tokens, rows):
            f.write(tok + " " + " ".join(f"{v:.9g}" for v in vec) + "\n")


def pretrain_skipgram(
    sequences: list[np.ndarray],
    vocab: Vocabulary,
    d_e: int,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
    out_path=None,
) -> np.ndarray:
    """Skip-gram with negative sampling over index-encoded sequences.

    Maximizes log sigma(u_ctx . v_center) plus the negative-sample terms;
    negatives are drawn from the unigram^0.75 distribution.  Single-threaded
    and deterministic given ``seed``; the learning rate decays linearly over
    all (center, context) pairs.  Returns the |vocab| x d_e input-vector
    table; if ``out_path`` is given, writes the real tokens (index >= 2) in
    the text format.
    """
    if not sequences:
        raise DataError("skip-gram pretraining needs a nonempty corpus")
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    if all(window >= len(seq) for seq in sequences):
        raise DataError(
            "window >= sequence length for every sequence; nothing to train on"
        )

    V = vocab.num_tokens
    counts = np.zeros(V, dtype=np.float64)
    pair_total = 0
    for seq in sequences:
        np.add.at(counts, seq, 1.0)
        L = len(seq)
        for i in range(L):
            pair_total += min(i + window, L - 1) - max(i - window, 0)
    counts[vocab.pad_index] = 0.0

    noise = counts**0.75
    if noise.sum() == 0:
        raise DataError("corpus contains no trainable tokens")
    noise_cdf = np.cumsum(noise / noise.sum())

    rng = np.random.default_rng(seed)
    vin = (rng.random((V, d_e)) - 0.5) / d_e
    vout = np.zeros((V, d_e), dtype=np.float64)

    processed = 0
    total = max(1, pair_total * max(epochs, 1))
    for _ in range(epochs):
        for seq in sequences:
            L = len(seq)
            for i in range(L):
                center = int(seq[i])
                lo, hi = max(i - window, 0), min(i + window, L - 1)
                for j in range(lo, hi + 1):
                    if j == i:
                        continue
                    step = max(lr * 1e-4, lr * (1.0 - processed / total))
                    processed += 1
                    ctx = int(seq[j])
                    v = vin[center]
                    update = np.zeros(d_e)
                    targets = [(ctx, 1.0)]
                    draws = np.searchsorted(noise_cdf, rng.random(negatives))
                    targets.extend((int(n), 0.0) for n in draws if int(n) != ctx)
                    for tok, label in targets:
                        u = vout[tok]
                        g = (label - float(sigmoid_ew(np.array([v @ u]))[0])) * step
                        update += g * u
                        vout[tok] += g * v
                    vin[center] += update

    if out_path is not None:
        write_text_embeddings(vocab.index_to_token[2:], vin[2:], out_path)
    return vin
