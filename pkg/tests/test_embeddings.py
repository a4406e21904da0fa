import numpy as np
import pytest

from multirescnn.embeddings import (
    INIT_RANGE,
    load_text_embeddings,
    pretrain_skipgram,
    random_embeddings,
    write_text_embeddings,
)
from multirescnn.errors import DataError
from multirescnn.pipeline import Document, build_vocab


@pytest.fixture()
def vocab():
    docs = [
        Document(str(i), ["alpha", "beta", "gamma", "delta"], {"L"}) for i in range(3)
    ]
    return build_vocab(docs, min_doc_freq=2)


def test_random_embeddings_shape_and_pad(vocab):
    em = random_embeddings(vocab, 8, seed=1)
    assert em.rows.shape == (vocab.num_tokens, 8)
    np.testing.assert_array_equal(em.rows[0], np.zeros(8))
    assert np.abs(em.rows[1:]).max() <= INIT_RANGE
    assert em.source_tag == "random"
    # deterministic in the seed
    np.testing.assert_array_equal(em.rows, random_embeddings(vocab, 8, seed=1).rows)


def test_text_embedding_round_trip(tmp_path, vocab):
    rng = np.random.default_rng(0)
    tokens = vocab.index_to_token[2:]
    rows = rng.normal(size=(len(tokens), 5))
    path = tmp_path / "emb.txt"
    write_text_embeddings(tokens, rows, path)

    em = load_text_embeddings(path, vocab, 5, seed=0)
    assert em.covered == len(tokens)
    assert em.source_tag == "pretrained"
    np.testing.assert_allclose(em.rows[2:], rows, rtol=1e-6)
    np.testing.assert_array_equal(em.rows[0], np.zeros(5))


def test_text_embedding_partial_coverage(tmp_path, vocab):
    path = tmp_path / "emb.txt"
    write_text_embeddings(["alpha", "nosuchtoken"], np.ones((2, 4)), path)
    em = load_text_embeddings(path, vocab, 4, seed=3)
    assert em.covered == 1
    np.testing.assert_array_equal(em.rows[vocab.token_to_index["alpha"]], np.ones(4))
    # uncovered tokens fall back to the seeded random init
    fallback = random_embeddings(vocab, 4, seed=3)
    j = vocab.token_to_index["beta"]
    np.testing.assert_array_equal(em.rows[j], fallback.rows[j])
    assert "1/" in em.coverage_line()


def test_text_embedding_dim_mismatch(tmp_path, vocab):
    path = tmp_path / "emb.txt"
    write_text_embeddings(["alpha"], np.ones((1, 4)), path)
    with pytest.raises(DataError):
        load_text_embeddings(path, vocab, 7, seed=0)


def test_text_embedding_malformed_rows(tmp_path, vocab):
    path = tmp_path / "emb.txt"
    path.write_text("2 3\nalpha 0.1 0.2 0.3\nbeta 0.1 oops 0.3\n")
    with pytest.raises(DataError) as exc:
        load_text_embeddings(path, vocab, 3, seed=0)
    assert ":3:" in str(exc.value)

    path.write_text("1 3\nalpha 0.1 0.2\n")
    with pytest.raises(DataError):
        load_text_embeddings(path, vocab, 3, seed=0)

    path.write_text("", encoding="utf-8")
    with pytest.raises(DataError):
        load_text_embeddings(path, vocab, 3, seed=0)


# ---------------------------------------------------------------------------
# skip-gram pretraining
# ---------------------------------------------------------------------------


def _toy_sequences(vocab, n=30, length=12, seed=0):
    rng = np.random.default_rng(seed)
    return [
        rng.integers(2, vocab.num_tokens, size=length).astype(np.int64)
        for _ in range(n)
    ]


def test_skipgram_deterministic_and_shaped(vocab):
    seqs = _toy_sequences(vocab)
    a = pretrain_skipgram(seqs, vocab, 6, window=2, negatives=3, epochs=1, seed=5)
    b = pretrain_skipgram(seqs, vocab, 6, window=2, negatives=3, epochs=1, seed=5)
    assert a.shape == (vocab.num_tokens, 6)
    np.testing.assert_array_equal(a, b)
    c = pretrain_skipgram(seqs, vocab, 6, window=2, negatives=3, epochs=1, seed=6)
    assert np.abs(a - c).max() > 0


def test_skipgram_learns_shared_contexts(vocab):
    # tokens 2 and 3 always predict the same context token 4, so their input
    # vectors should end up far more similar than 2 is to the unrelated 5
    seqs = [
        np.array([2, 4], dtype=np.int64),
        np.array([3, 4], dtype=np.int64),
        np.array([5, 5], dtype=np.int64),
    ] * 60
    vin = pretrain_skipgram(seqs, vocab, 8, window=1, negatives=4, epochs=10, seed=1)

    def cos(u, w):
        return float(u @ w / (np.linalg.norm(u) * np.linalg.norm(w) + 1e-12))

    assert cos(vin[2], vin[3]) > cos(vin[2], vin[5]) + 0.5


def test_skipgram_window_too_large(vocab):
    seqs = [np.array([2, 3], dtype=np.int64)]
    with pytest.raises(DataError):
        pretrain_skipgram(seqs, vocab, 4, window=5, epochs=1, seed=0)
    # fine if at least one sequence is long enough
    seqs.append(np.arange(2, 2 + 6, dtype=np.int64) % vocab.num_tokens)
    pretrain_skipgram(seqs, vocab, 4, window=5, epochs=1, seed=0)


def test_skipgram_writes_loadable_file(tmp_path, vocab):
    seqs = _toy_sequences(vocab, n=10, length=8)
    out = tmp_path / "pre.txt"
    vin = pretrain_skipgram(seqs, vocab, 5, window=2, epochs=1, seed=2, out_path=out)
    em = load_text_embeddings(out, vocab, 5, seed=0)
    assert em.covered == vocab.num_tokens - 2
    np.testing.assert_allclose(em.rows[2:], vin[2:], rtol=1e-6, atol=1e-9)
