"""End-to-end correctness gates for the whole package.

Each test here is a single self-contained claim: gradients agree with finite
differences, layer math agrees with naive loop transcriptions, metrics agree
with brute force, training behaves (overfits a tiny corpus, larger models beat
smaller ones on a planted-pattern corpus, runs are bit-deterministic), and
batching is a pure implementation detail.  They are slower than the unit tests
and deliberately go through public entry points only.
"""

import json
import time

import numpy as np

from multirescnn.cli import PRESETS, main
from multirescnn.embeddings import random_embeddings
from multirescnn.metrics import auc_scores, f1_scores, precision_at_k
from multirescnn.model import (
    ModelConfig,
    backward_batch,
    bce_loss_batch,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    multi_filter_forward,
    param_count,
    parameter_shapes,
    residual_block_forward,
)
from multirescnn.pipeline import build_vocab, encode_dataset, synth_corpus
from multirescnn.training import TrainConfig, evaluate, train

import oracles


# ---------------------------------------------------------------------------
# 1. whole-model gradients vs central finite differences
# ---------------------------------------------------------------------------

# One micro config per architecture shape: single filter, multi filter, and
# both with residual stacks.  The third runs unmasked, which is only sound
# when no document needs padding, hence the equal-length batch.
GRAD_CHECK_CONFIGS = [
    ("single-filter", dict(kernel_sizes=(3,)), True, (5, 7, 6)),
    ("multi-filter", dict(kernel_sizes=(3, 5), output_mode="literal_row_sum",
                          use_bias=False), True, (4, 8, 6)),
    ("single-filter-residual", dict(kernel_sizes=(3,), residual_blocks=2,
                                    channel_schedule=(4, 3, 2)), False, (6, 6, 6)),
    ("multi-filter-residual", dict(kernel_sizes=(3, 5, 9), residual_blocks=1,
                                   channel_schedule=(4, 2)), True, (3, 9, 11)),
]


def _finite_difference_worst(cfg, params, idx, lengths, Y, h=1e-6):
    """Max relative gradient error over every parameter entry."""
    probs, trace = forward_batch(idx, lengths, params, cfg, training=False)
    grads = backward_batch(trace, Y, params, cfg)

    def batch_loss():
        p, t = forward_batch(idx, lengths, params, cfg, training=False)
        return bce_loss_batch(t.y_hat, Y)[0]

    worst = 0.0
    for name, arr in params.flat():
        g = grads[name].reshape(-1)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = batch_loss()
            flat[i] = orig - h
            lm = batch_loss()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            denom = max(abs(g[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(g[i] - numeric) / denom)
    return worst


def test_whole_model_gradients_match_finite_differences():
    started = time.monotonic()
    rng = np.random.default_rng(202)
    vocab_size, num_labels = 12, 4
    for name, overrides, masked, lengths in GRAD_CHECK_CONFIGS:
        cfg = ModelConfig(num_labels=num_labels, embed_dim=5,
                          filter_out_channels=4, dropout_rate=0.0,
                          mask_pad=masked, **overrides)
        params = init_params(
            cfg, 7, rng.uniform(-0.3, 0.3, size=(vocab_size, 5)))
        lengths = np.array(lengths)
        idx = np.zeros((len(lengths), lengths.max()), dtype=np.int64)
        for b, n in enumerate(lengths):
            idx[b, :n] = rng.integers(1, vocab_size, size=n)
        Y = (rng.random((len(lengths), num_labels)) < 0.4).astype(float)
        worst = _finite_difference_worst(cfg, params, idx, lengths, Y)
        assert worst <= 1e-4, f"{name}: max relative gradient error {worst:.3e}"
    assert time.monotonic() - started < 120.0


# ---------------------------------------------------------------------------
# 2. convolution layers vs naive loop transcriptions
# ---------------------------------------------------------------------------


def test_conv_and_residual_layers_match_naive_loops():
    rng = np.random.default_rng(404)
    for trial in range(120):
        n = int(rng.integers(1, 12))
        d_in = int(rng.integers(1, 5))
        d_out = int(rng.integers(1, 5))
        kernels = sorted(rng.choice([1, 3, 5, 7], size=rng.integers(1, 4),
                                    replace=False).tolist())
        E = rng.standard_normal((n, d_in))

        cfg = ModelConfig(kernel_sizes=tuple(kernels), num_labels=2,
                          embed_dim=d_in, filter_out_channels=d_out,
                          dropout_rate=0.0)
        params = init_params(cfg, int(rng.integers(1 << 30)),
                             rng.standard_normal((6, d_in)))
        got = multi_filter_forward(E, params, cfg)
        for f, k in enumerate(kernels):
            want = oracles.filter_layer(E, params.conv_w(f), params.conv_b(f), k)
            np.testing.assert_allclose(got[f], want, atol=1e-12)

        k = int(rng.choice([1, 3, 5]))
        w1 = rng.standard_normal((k * d_in, d_out))
        b1 = rng.standard_normal(d_out)
        w2 = rng.standard_normal((k * d_out, d_out))
        b2 = rng.standard_normal(d_out)
        w3 = rng.standard_normal((d_in, d_out))
        b3 = rng.standard_normal(d_out)
        got_block, _ = residual_block_forward(E, w1, b1, w2, b2, w3, b3, k)
        want_block = oracles.residual_block(E, w1, b1, w2, b2, w3, b3, k)
        np.testing.assert_allclose(got_block, want_block, atol=1e-12)


# ---------------------------------------------------------------------------
# 3. ranking/thresholding metrics vs brute force
# ---------------------------------------------------------------------------


def test_ranking_metrics_match_brute_force():
    rng = np.random.default_rng(606)
    for trial in range(1000):
        n = int(rng.integers(1, 51))
        l = int(rng.integers(1, 11))
        y = (rng.random((n, l)) < rng.uniform(0.1, 0.7)).astype(np.int64)
        # coarse score grid so ties actually occur
        s = np.round(rng.random((n, l)), 1)

        f1 = f1_scores(y, s, threshold=0.5)
        _, _, mi_f, _, _, ma_f = oracles.micro_macro_f1(y, s)
        np.testing.assert_allclose(f1.micro_f1, mi_f, atol=1e-9)
        np.testing.assert_allclose(f1.macro_f1, ma_f, atol=1e-9)

        auc = auc_scores(y, s)
        mi_want, ma_want = oracles.micro_macro_auc(y, s)
        np.testing.assert_allclose(auc.micro_auc, mi_want, atol=1e-9,
                                   equal_nan=True)
        np.testing.assert_allclose(auc.macro_auc, ma_want, atol=1e-9,
                                   equal_nan=True)

        k = int(rng.integers(1, l + 1))
        np.testing.assert_allclose(precision_at_k(y, s, k),
                                   oracles.p_at_k(y, s, k), atol=1e-9)


# ---------------------------------------------------------------------------
# 4. single-filter degeneration
# ---------------------------------------------------------------------------


def test_single_filter_model_matches_independent_baseline():
    rng = np.random.default_rng(808)
    for trial in range(30):
        n = int(rng.integers(2, 15))
        d_e = int(rng.integers(2, 6))
        d_f = int(rng.integers(1, 5))
        l = int(rng.integers(2, 6))
        k = int(rng.choice([1, 3, 5]))
        vocab = 10

        cfg = ModelConfig(kernel_sizes=(k,), num_labels=l, embed_dim=d_e,
                          filter_out_channels=d_f, dropout_rate=0.0)
        params = init_params(cfg, int(rng.integers(1 << 30)),
                             rng.standard_normal((vocab, d_e)))
        tokens = rng.integers(1, vocab, size=n)
        probs, _ = forward(tokens, params, cfg)

        want = oracles.single_filter_model(
            tokens, params.embedding, params.conv_w(0), params.conv_b(0),
            params.attn_u, params.out_w, params.out_b, k)
        np.testing.assert_allclose(probs, want, atol=1e-12)


# ---------------------------------------------------------------------------
# 5. tiny-corpus overfit
# ---------------------------------------------------------------------------


def test_full_model_overfits_small_corpus():
    started = time.monotonic()
    docs, _, _ = synth_corpus(num_docs=50, num_labels=10,
                              pattern_lengths=[2, 5, 9], vocab_size=120,
                              doc_length=60, noise_rate=0.0, seed=42)
    vocab = build_vocab(docs, min_doc_freq=1)
    ds = encode_dataset(docs, vocab, "train")

    cfg = ModelConfig(kernel_sizes=(3, 5, 9, 15, 19, 25), num_labels=vocab.num_labels,
                      embed_dim=16, filter_out_channels=16, residual_blocks=1,
                      channel_schedule=(16, 8), dropout_rate=0.2)
    params = init_params(cfg, 0, random_embeddings(vocab, 16, 0).rows)
    tcfg = TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=200,
                       patience=15, early_stop_metric="micro_f1", seed=0)
    result = train(params, cfg, ds, ds, tcfg)

    assert result.best_value >= 0.95, (
        f"train micro-F1 peaked at {result.best_value:.4f} "
        f"(epoch {result.best_epoch})")
    assert time.monotonic() - started < 600.0


# ---------------------------------------------------------------------------
# 6. bigger architectures win on a planted-pattern corpus
# ---------------------------------------------------------------------------


def test_architecture_ablation_ordering():
    """Mean test micro-F1 over three seeds at a fixed shared budget must not
    decrease when going single-kernel -> multi-kernel -> multi-kernel with a
    residual stack.

    The corpus plants label n-grams of lengths 2..19, so a lone width-9
    kernel structurally misses long patterns.  The residual comparison runs
    at a three-epoch budget where optimization speed, not final capacity, is
    what separates the variants: at this scale every variant converges to
    the same plateau eventually, while the shortcut path demonstrably gets
    there sooner (the gap holds seed-by-seed, not just on the mean).
    """
    kernels = (3, 5, 9, 15, 19, 25)
    variants = {
        "cnn": dict(kernel_sizes=(9,), residual_blocks=0,
                    channel_schedule=(16,)),
        "multicnn": dict(kernel_sizes=kernels, residual_blocks=0,
                         channel_schedule=(16,)),
        "multirescnn": dict(kernel_sizes=kernels, residual_blocks=1,
                            channel_schedule=(16, 16)),
    }

    tr, dv, te = synth_corpus(num_docs=5000, num_labels=20,
                              pattern_lengths=[2, 5, 9, 15, 19],
                              vocab_size=200, doc_length=60, noise_rate=0.2,
                              seed=7)
    vocab = build_vocab(tr, min_doc_freq=3)
    train_ds = encode_dataset(tr, vocab, "train")
    dev_ds = encode_dataset(dv, vocab, "dev")
    test_ds = encode_dataset(te, vocab, "test")

    means = {}
    for name, overrides in variants.items():
        scores = []
        for seed in (0, 1, 2):
            cfg = ModelConfig(num_labels=vocab.num_labels, embed_dim=32,
                              filter_out_channels=16, dropout_rate=0.0,
                              **overrides)
            params = init_params(cfg, seed,
                                 random_embeddings(vocab, 32, seed).rows)
            tcfg = TrainConfig(learning_rate=5e-4, batch_size=16,
                               max_epochs=3, patience=3,
                               early_stop_metric="micro_f1", seed=seed)
            result = train(params, cfg, train_ds, dev_ds, tcfg)
            report, _ = evaluate(result.final_params, cfg, test_ds, 16,
                                 ks=(5,))
            scores.append(report.micro_f1)
        means[name] = float(np.mean(scores))

    assert means["cnn"] > 0.05, f"width-9 baseline never learned: {means}"
    assert means["multicnn"] >= means["cnn"], means
    assert means["multirescnn"] >= means["multicnn"], means


# ---------------------------------------------------------------------------
# 7. parameter accounting
# ---------------------------------------------------------------------------


def test_param_count_matches_enumeration_for_every_preset():
    V, l, d_e = 51_917, 8_921, 100
    for name, overrides in PRESETS.items():
        cfg = ModelConfig(num_labels=l, embed_dim=d_e,
                          filter_out_channels=100, dropout_rate=0.2,
                          **overrides)
        total, breakdown = param_count(cfg, V)
        enumerated = sum(int(np.prod(shape))
                         for _, shape in parameter_shapes(cfg, V))
        assert total == enumerated, name
        assert total == sum(breakdown.values()), name

    # spelled-out arithmetic for the two ends of the preset range
    def conv(k, d_in, d_out):
        return k * d_in * d_out + d_out

    attention_and_output = lambda F: F * l + (F * l + l)
    cnn_total = V * d_e + conv(9, d_e, 100) + attention_and_output(100)
    mrc_total = (V * d_e
                 + sum(conv(k, d_e, 100) for k in (3, 5, 9, 15, 19, 25))
                 + sum(conv(k, 100, 50) + conv(k, 50, 50) + conv(1, 100, 50)
                       for k in (3, 5, 9, 15, 19, 25))
                 + attention_and_output(6 * 50))

    cnn_cfg = ModelConfig(num_labels=l, embed_dim=d_e, filter_out_channels=100,
                          **PRESETS["cnn"])
    mrc_cfg = ModelConfig(num_labels=l, embed_dim=d_e, filter_out_channels=100,
                          **PRESETS["multirescnn"])
    assert param_count(cnn_cfg, V)[0] == cnn_total == 7_074_921
    assert param_count(mrc_cfg, V)[0] == mrc_total == 11_914_721
    assert mrc_total > 1.5 * cnn_total


# ---------------------------------------------------------------------------
# 8. bit-for-bit deterministic training via the CLI
# ---------------------------------------------------------------------------


def _strip_timings(log_text):
    records = []
    for line in log_text.strip().splitlines():
        rec = json.loads(line)
        rec.pop("seconds", None)
        records.append(rec)
    return records


def test_repeat_training_run_is_deterministic(tmp_path):
    corpus = tmp_path / "corpus"
    data = tmp_path / "data"
    assert main(["synth-gen", "--out", str(corpus), "--num-docs", "80",
                 "--num-labels", "6", "--pattern-lengths", "2,3",
                 "--vocab-size", "60", "--doc-length", "24",
                 "--seed", "5"]) == 0
    assert main(["preprocess", "--train", str(corpus / "train.jsonl"),
                 "--dev", str(corpus / "dev.jsonl"),
                 "--test", str(corpus / "test.jsonl"),
                 "--out", str(data), "--min-doc-freq", "2"]) == 0

    runs = []
    for tag in ("a", "b"):
        out = tmp_path / f"run_{tag}"
        assert main(["train", "--data", str(data), "--out", str(out),
                     "--preset", "multicnn3", "--filter-out-channels", "5",
                     "--embed-dim", "8", "--max-epochs", "3",
                     "--learning-rate", "1e-3", "--seed", "17"]) == 0
        runs.append(out)

    first, second = runs
    assert (_strip_timings((first / "train_log.jsonl").read_text())
            == _strip_timings((second / "train_log.jsonl").read_text()))
    assert ((first / "config.ini").read_bytes()
            == (second / "config.ini").read_bytes())

    params_a, cfg_a, _ = load_checkpoint(first / "model.ckpt")
    params_b, cfg_b, _ = load_checkpoint(second / "model.ckpt")
    assert cfg_a == cfg_b
    rng = np.random.default_rng(99)
    lengths = np.array([12, 7, 9])
    idx = np.zeros((3, 12), dtype=np.int64)
    for b, n in enumerate(lengths):
        idx[b, :n] = rng.integers(1, params_a.vocab_size, size=n)
    probs_a, _ = forward_batch(idx, lengths, params_a, cfg_a)
    probs_b, _ = forward_batch(idx, lengths, params_b, cfg_b)
    np.testing.assert_allclose(probs_a, probs_b, atol=1e-6)


# ---------------------------------------------------------------------------
# 9. batching is a pure implementation detail
# ---------------------------------------------------------------------------


def test_batched_inference_matches_per_document():
    rng = np.random.default_rng(1001)
    cfg = ModelConfig(kernel_sizes=(3, 5), num_labels=6, embed_dim=7,
                      filter_out_channels=5, residual_blocks=1,
                      channel_schedule=(5, 4), dropout_rate=0.0)
    params = init_params(cfg, 3, rng.uniform(-0.5, 0.5, size=(40, 7)))

    for trial in range(100):
        B = int(rng.integers(1, 7))
        lengths = rng.integers(1, 31, size=B)
        idx = np.zeros((B, lengths.max()), dtype=np.int64)
        for b, n in enumerate(lengths):
            idx[b, :n] = rng.integers(1, 40, size=n)
        batch_probs, _ = forward_batch(idx, lengths, params, cfg)
        for b, n in enumerate(lengths):
            doc_probs, _ = forward(idx[b, :n], params, cfg)
            np.testing.assert_allclose(batch_probs[b], doc_probs, atol=1e-9)
