import numpy as np
import pytest

from multirescnn.pipeline import build_vocab, encode_dataset, synth_corpus


@pytest.fixture(scope="session")
def small_corpus():
    """A small clean synthetic corpus shared across tests (read-only)."""
    return synth_corpus(
        num_docs=120,
        num_labels=6,
        pattern_lengths=[2, 3],
        vocab_size=60,
        doc_length=24,
        noise_rate=0.0,
        seed=11,
    )


@pytest.fixture(scope="session")
def small_encoded(small_corpus):
    train, dev, test = small_corpus
    vocab = build_vocab(train, min_doc_freq=2)
    return (
        vocab,
        encode_dataset(train, vocab, "train"),
        encode_dataset(dev, vocab, "dev"),
        encode_dataset(test, vocab, "test"),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
