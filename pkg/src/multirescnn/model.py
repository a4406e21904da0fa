"""The multi-filter residual convolutional classifier.

Forward pipeline per document: embedding lookup -> (dropout) -> one
same-length tanh convolution per kernel size -> per-filter stack of residual
blocks -> column-wise feature concatenation -> per-label attention over
positions -> one logit per label -> sigmoid.

A residual block is three convolutions: a k-kernel tanh convolution, a
k-kernel linear convolution on its output, and a 1x1 linear shortcut from the
block input; the two linear outputs are added and passed through tanh.

The backward pass is hand-derived (no autograd).  Gradients are produced for
every entry of the flat parameter enumeration; the PAD embedding row's
gradient is always discarded so that row stays exactly zero.

All computation is batched internally; a single document is a batch of one,
and with ``mask_pad`` enabled the batched result is exactly equal to the
per-document result (padded rows are zeroed after every convolution and
excluded from the attention softmax).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .numerics import (
    ConvSpec,
    conv1d_backward_batch,
    conv1d_forward_batch,
    dropout,
    matmul,
    sigmoid_ew,
    softmax_over_rows,
)

CHECKPOINT_MAGIC = b"MRCN"
CHECKPOINT_VERSION = 1

OUTPUT_MODES = ("per_label", "literal_row_sum")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.

    ``channel_schedule`` lists the residual channel widths from the filter
    output (index 0, equal to ``filter_out_channels``) through each block's
    out-channels; with ``residual_blocks == 0`` it is just
    ``(filter_out_channels,)`` and attention consumes
    ``m * filter_out_channels`` features.
    """

    kernel_sizes: tuple[int, ...]
    num_labels: int
    embed_dim: int = 100
    filter_out_channels: int = 100
    residual_blocks: int = 0
    channel_schedule: tuple[int, ...] = ()
    dropout_rate: float = 0.2
    output_mode: str = "per_label"
    use_bias: bool = True
    mask_pad: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        sched = tuple(int(c) for c in self.channel_schedule)
        if not sched and self.residual_blocks == 0:
            sched = (self.filter_out_channels,)
        object.__setattr__(self, "channel_schedule", sched)
        self._validate()

    def _validate(self) -> None:
        if not self.kernel_sizes:
            raise ConfigError("kernel_sizes must be nonempty")
        for k in self.kernel_sizes:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd and >= 1, got {k}")
        if len(set(self.kernel_sizes)) != len(self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be distinct, got {self.kernel_sizes}")
        if self.num_labels < 1:
            raise ConfigError(f"num_labels must be >= 1, got {self.num_labels}")
        if self.embed_dim < 1 or self.filter_out_channels < 1:
            raise ConfigError("embed_dim and filter_out_channels must be >= 1")
        if self.residual_blocks < 0:
            raise ConfigError("residual_blocks must be >= 0")
        if len(self.channel_schedule) != self.residual_blocks + 1:
            raise ConfigError(
                f"channel_schedule must list residual_blocks+1 ="
                f" {self.residual_blocks + 1} widths, got {self.channel_schedule}"
            )
        if self.channel_schedule[0] != self.filter_out_channels:
            raise ConfigError(
                "channel_schedule[0] must equal filter_out_channels "
                f"({self.channel_schedule[0]} != {self.filter_out_channels})"
            )
        if any(c < 1 for c in self.channel_schedule):
            raise ConfigError("channel widths must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.output_mode not in OUTPUT_MODES:
            raise ConfigError(
                f"output_mode must be one of {OUTPUT_MODES}, got {self.output_mode!r}"
            )

    @property
    def num_filters(self) -> int:
        return len(self.kernel_sizes)

    @property
    def feature_width(self) -> int:
        """Column count of the concatenated feature matrix consumed by attention."""
        return self.num_filters * self.channel_schedule[-1]

    def to_dict(self) -> dict:
        return {
            "kernel_sizes": list(self.kernel_sizes),
            "num_labels": self.num_labels,
            "embed_dim": self.embed_dim,
            "filter_out_channels": self.filter_out_channels,
            "residual_blocks": self.residual_blocks,
            "channel_schedule": list(self.channel_schedule),
            "dropout_rate": self.dropout_rate,
            "output_mode": self.output_mode,
            "use_bias": self.use_bias,
            "mask_pad": self.mask_pad,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(
                kernel_sizes=tuple(d["kernel_sizes"]),
                num_labels=int(d["num_labels"]),
                embed_dim=int(d["embed_dim"]),
                filter_out_channels=int(d["filter_out_channels"]),
                residual_blocks=int(d["residual_blocks"]),
                channel_schedule=tuple(d["channel_schedule"]),
                dropout_rate=float(d["dropout_rate"]),
                output_mode=str(d["output_mode"]),
                use_bias=bool(d["use_bias"]),
                mask_pad=bool(d["mask_pad"]),
            )
        except KeyError as e:
            raise ConfigError(f"model config missing key {e}") from e


def parameter_shapes(config: ModelConfig, vocab_size: int) -> list[tuple[str, tuple[int, ...]]]:
    """The flat parameter enumeration: stable (name, shape) order used by the
    optimizer state, gradient dicts, checkpoints and gradient checks."""
    d_e, d_f, l = config.embed_dim, config.filter_out_channels, config.num_labels
    sched = config.channel_schedule
    shapes: list[tuple[str, tuple[int, ...]]] = [("embedding", (vocab_size, d_e))]
    for f, k in enumerate(config.kernel_sizes):
        shapes.append((f"conv{f}.weight", (k * d_e, d_f)))
        if config.use_bias:
            shapes.append((f"conv{f}.bias", (d_f,)))
    for f, k in enumerate(config.kernel_sizes):
        for i in range(config.residual_blocks):
            din, dout = sched[i], sched[i + 1]
            shapes.append((f"res{f}.{i}.w1", (k * din, dout)))
            if config.use_bias:
                shapes.append((f"res{f}.{i}.b1", (dout,)))
            shapes.append((f"res{f}.{i}.w2", (k * dout, dout)))
            if config.use_bias:
                shapes.append((f"res{f}.{i}.b2", (dout,)))
            shapes.append((f"res{f}.{i}.w3", (din, dout)))
            if config.use_bias:
                shapes.append((f"res{f}.{i}.b3", (dout,)))
    width = config.feature_width
    shapes.append(("attention.u", (width, l)))
    shapes.append(("output.weight", (width, l)))
    if config.use_bias:
        shapes.append(("output.bias", (l,)))
    return shapes


def param_count(config: ModelConfig, vocab_size: int) -> tuple[int, dict[str, int]]:
    """Closed-form parameter count with a per-component breakdown."""
    breakdown = {"embedding": 0, "conv": 0, "residual": 0, "attention": 0, "output": 0}
    for name, shape in parameter_shapes(config, vocab_size):
        n = int(np.prod(shape))
        if name == "embedding":
            breakdown["embedding"] += n
        elif name.startswith("conv"):
            breakdown["conv"] += n
        elif name.startswith("res"):
            breakdown["residual"] += n
        elif name.startswith("attention"):
            breakdown["attention"] += n
        else:
            breakdown["output"] += n
    return sum(breakdown.values()), breakdown


class ModelParams:
    """All learnable arrays, addressable by name and by stable flat order."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        expected = parameter_shapes(config, arrays["embedding"].shape[0])
        self._names = [name for name, _ in expected]
        for name, shape in expected:
            if name not in arrays:
                raise ConfigError(f"missing parameter array {name!r}")
            if tuple(arrays[name].shape) != shape:
                raise ConfigError(
                    f"parameter {name!r}: expected shape {shape}, got {arrays[name].shape}"
                )
        extra = set(arrays) - set(self._names)
        if extra:
            raise ConfigError(f"unexpected parameter arrays: {sorted(extra)}")
        self.arrays = {name: arrays[name] for name in self._names}
        self.config = config

    # -- accessors ---------------------------------------------------------
    @property
    def embedding(self) -> np.ndarray:
        return self.arrays["embedding"]

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    def conv_w(self, f: int) -> np.ndarray:
        return self.arrays[f"conv{f}.weight"]

    def conv_b(self, f: int):
        return self.arrays.get(f"conv{f}.bias")

    def res(self, f: int, i: int, which: str):
        return self.arrays.get(f"res{f}.{i}.{which}")

    @property
    def attn_u(self) -> np.ndarray:
        return self.arrays["attention.u"]

    @property
    def out_w(self) -> np.ndarray:
        return self.arrays["output.weight"]

    @property
    def out_b(self):
        return self.arrays.get("output.bias")

    # -- enumeration -------------------------------------------------------
    def flat(self) -> list[tuple[str, np.ndarray]]:
        return [(name, self.arrays[name]) for name in self._names]

    def flat_arrays(self) -> list[np.ndarray]:
        return [self.arrays[name] for name in self._names]

    def names(self) -> list[str]:
        return list(self._names)

    def num_entries(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: a.copy() for n, a in self.arrays.items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(a) for n, a in self.arrays.items()}


def _xavier(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (shape[0] + shape[1])))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int, embedding_rows: np.ndarray) -> ModelParams:
    """Xavier-uniform weights, zero biases, embeddings copied from the given
    matrix (PAD row forced to zero).  Deterministic in ``seed``."""
    emb = np.asarray(embedding_rows, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != config.embed_dim:
        raise ConfigError(
            f"embedding matrix shape {emb.shape} does not match embed_dim="
            f"{config.embed_dim}"
        )
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config, emb.shape[0]):
        if name == "embedding":
            arrays[name] = emb.copy()
            arrays[name][0] = 0.0
        elif len(shape) == 1:
            arrays[name] = np.zeros(shape, dtype=np.float64)
        else:
            arrays[name] = _xavier(rng, shape)
    return ModelParams(config, arrays)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


@dataclass
class BlockTrace:
    X: np.ndarray  # block input
    X1: np.ndarray  # tanh(k-conv(X))
    X2: np.ndarray  # k-conv(X1), linear
    X3: np.ndarray  # 1x1 shortcut conv(X), linear
    H: np.ndarray  # tanh(X2 + X3)


@dataclass
class ForwardTrace:
    """Every intermediate needed by the backward pass (batch axis leads;
    a single document is a batch of one)."""

    idx: np.ndarray  # (B, N) token indices
    lengths: np.ndarray  # (B,)
    mask: np.ndarray | None  # (B, N) or None when mask_pad is off
    E: np.ndarray  # (B, N, d_e) embedding output fed to the filters
    drop_mask: np.ndarray | None
    conv_h: list  # per filter: (B, N, d_f)
    blocks: list  # per filter: list of BlockTrace
    H: np.ndarray  # (B, N, feature_width)
    A: np.ndarray  # (B, N, l)
    V: np.ndarray  # (B, l, feature_width)
    y_hat: np.ndarray  # (B, l) logits
    probs: np.ndarray  # (B, l)


def _conv_specs(config: ModelConfig, k: int):
    bias = config.use_bias
    filt = ConvSpec(k, config.embed_dim, config.filter_out_channels, has_bias=bias)
    blocks = []
    sched = config.channel_schedule
    for i in range(config.residual_blocks):
        din, dout = sched[i], sched[i + 1]
        blocks.append(
            (
                ConvSpec(k, din, dout, has_bias=bias),
                ConvSpec(k, dout, dout, has_bias=bias),
                ConvSpec(1, din, dout, has_bias=bias),
            )
        )
    return filt, blocks


def _res_block_batch(X, specs, w1, b1, w2, b2, w3, b3, mcol) -> BlockTrace:
    spec1, spec2, spec3 = specs
    X1 = np.tanh(conv1d_forward_batch(X, spec1, w1, b1))
    if mcol is not None:
        X1 = X1 * mcol
    X2 = conv1d_forward_batch(X1, spec2, w2, b2)
    X3 = conv1d_forward_batch(X, spec3, w3, b3)
    H = np.tanh(X2 + X3)
    if mcol is not None:
        H = H * mcol
    return BlockTrace(X, X1, X2, X3, H)


def _position_softmax(Z: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Softmax over the position axis (axis 1) of (B, N, l) scores; padded
    positions (mask 0) get zero weight."""
    if mask is None:
        mx = Z.max(axis=1, keepdims=True)
        E = np.exp(Z - mx)
    else:
        neg = np.where(mask[:, :, None] > 0, Z, -np.inf)
        mx = neg.max(axis=1, keepdims=True)
        E = np.exp(neg - mx)
    return E / E.sum(axis=1, keepdims=True)


def forward_batch(
    idx: np.ndarray,
    lengths: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the full pipeline over a padded batch; returns (probs, trace)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 2:
        raise ValueError(f"expected (batch, positions) indices, got shape {idx.shape}")
    B, N = idx.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (B,):
        raise ValueError(f"lengths shape {lengths.shape} does not match batch {B}")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= params.vocab_size:
        raise DataError("token index out of vocabulary range")

    mask = None
    mcol = None
    if config.mask_pad:
        mask = (np.arange(N)[None, :] < lengths[:, None]).astype(np.float64)
        mcol = mask[:, :, None]

    E = params.embedding[idx]
    if mcol is not None:
        E = E * mcol
    drop_mask = None
    if training and config.dropout_rate > 0.0:
        E, drop_mask = dropout(E, config.dropout_rate, True, rng)

    conv_h = []
    blocks: list[list[BlockTrace]] = []
    tops = []
    for f, k in enumerate(config.kernel_sizes):
        filt_spec, block_specs = _conv_specs(config, k)
        H = np.tanh(conv1d_forward_batch(E, filt_spec, params.conv_w(f), params.conv_b(f)))
        if mcol is not None:
            H = H * mcol
        conv_h.append(H)
        traces = []
        X = H
        for i, specs in enumerate(block_specs):
            bt = _res_block_batch(
                X,
                specs,
                params.res(f, i, "w1"),
                params.res(f, i, "b1"),
                params.res(f, i, "w2"),
                params.res(f, i, "b2"),
                params.res(f, i, "w3"),
                params.res(f, i, "b3"),
                mcol,
            )
            traces.append(bt)
            X = bt.H
        blocks.append(traces)
        tops.append(X)

    H = np.concatenate(tops, axis=2)
    Z = H @ params.attn_u
    A = _position_softmax(Z, mask)
    V = np.einsum("bnl,bnf->blf", A, H)

    if config.output_mode == "per_label":
        y_hat = np.einsum("blf,fl->bl", V, params.out_w)
    else:
        y_hat = V @ params.out_w.sum(axis=1)
    if params.out_b is not None:
        y_hat = y_hat + params.out_b
    probs = sigmoid_ew(y_hat)

    trace = ForwardTrace(
        idx=idx,
        lengths=lengths,
        mask=mask,
        E=E,
        drop_mask=drop_mask,
        conv_h=conv_h,
        blocks=blocks,
        H=H,
        A=A,
        V=V,
        y_hat=y_hat,
        probs=probs,
    )
    return probs, trace


def backward_batch(
    trace: ForwardTrace,
    Y: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
) -> dict[str, np.ndarray]:
    """Gradients of the batch loss (mean over documents of the label-summed
    binary cross entropy) for every parameter in the flat enumeration."""
    Y = np.asarray(Y, dtype=np.float64)
    B = trace.probs.shape[0]
    if Y.shape != trace.probs.shape:
        raise ValueError(f"labels shape {Y.shape} != predictions {trace.probs.shape}")
    grads = params.zero_grads()
    mcol = trace.mask[:, :, None] if trace.mask is not None else None

    g = (trace.probs - Y) / B  # dL/d y_hat

    if config.output_mode == "per_label":
        dV = g[:, :, None] * params.out_w.T[None, :, :]
        grads["output.weight"] += np.einsum("bl,blf->fl", g, trace.V)
    else:
        s = params.out_w.sum(axis=1)
        dV = g[:, :, None] * s[None, None, :]
        grads["output.weight"] += np.einsum("bl,blf->f", g, trace.V)[:, None]
    if config.use_bias:
        grads["output.bias"] += g.sum(axis=0)

    dA = np.einsum("bnf,blf->bnl", trace.H, dV)
    dH = np.einsum("bnl,blf->bnf", trace.A, dV)
    inner = (trace.A * dA).sum(axis=1, keepdims=True)
    dZ = trace.A * (dA - inner)
    grads["attention.u"] += np.einsum("bnf,bnl->fl", trace.H, dZ)
    dH += dZ @ params.attn_u.T

    m = config.num_filters
    chunks = np.split(dH, m, axis=2) if m > 1 else [dH]

    dE = np.zeros_like(trace.E)
    for f, k in enumerate(config.kernel_sizes):
        filt_spec, block_specs = _conv_specs(config, k)
        dX = chunks[f]
        for i in reversed(range(config.residual_blocks)):
            bt = trace.blocks[f][i]
            spec1, spec2, spec3 = block_specs[i]
            dS = dX * (1.0 - bt.H**2)
            if mcol is not None:
                dS = dS * mcol
            gX3, gW3, gb3 = conv1d_backward_batch(bt.X, spec3, params.res(f, i, "w3"), dS)
            gX1, gW2, gb2 = conv1d_backward_batch(bt.X1, spec2, params.res(f, i, "w2"), dS)
            dpre1 = gX1 * (1.0 - bt.X1**2)
            if mcol is not None:
                dpre1 = dpre1 * mcol
            gX0, gW1, gb1 = conv1d_backward_batch(bt.X, spec1, params.res(f, i, "w1"), dpre1)
            grads[f"res{f}.{i}.w1"] += gW1
            grads[f"res{f}.{i}.w2"] += gW2
            grads[f"res{f}.{i}.w3"] += gW3
            if config.use_bias:
                grads[f"res{f}.{i}.b1"] += gb1
                grads[f"res{f}.{i}.b2"] += gb2
                grads[f"res{f}.{i}.b3"] += gb3
            dX = gX0 + gX3
        dpre = dX * (1.0 - trace.conv_h[f] ** 2)
        if mcol is not None:
            dpre = dpre * mcol
        gE, gWf, gbf = conv1d_backward_batch(trace.E, filt_spec, params.conv_w(f), dpre)
        grads[f"conv{f}.weight"] += gWf
        if config.use_bias:
            grads[f"conv{f}.bias"] += gbf
        dE += gE

    if trace.drop_mask is not None:
        dE = dE * trace.drop_mask / (1.0 - config.dropout_rate)
    if mcol is not None:
        dE = dE * mcol
    demb = grads["embedding"]
    np.add.at(demb, trace.idx.reshape(-1), dE.reshape(-1, config.embed_dim))
    demb[0] = 0.0  # PAD row stays frozen
    return grads


def forward(
    indices,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Per-document forward: probability vector of length num_labels."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"expected a 1-D index sequence, got shape {idx.shape}")
    probs, trace = forward_batch(
        idx[None, :], np.array([idx.size]), params, config, training, rng
    )
    return probs[0], trace


def backward(
    trace: ForwardTrace, y, params: ModelParams, config: ModelConfig
) -> dict[str, np.ndarray]:
    """Per-document backward (batch of one)."""
    return backward_batch(trace, np.asarray(y, dtype=np.float64)[None, :], params, config)


# ---------------------------------------------------------------------------
# Single-document layer ops (2-D contracts, thin wrappers over the batch path)
# ---------------------------------------------------------------------------


def multi_filter_forward(E, params: ModelParams, config: ModelConfig) -> list[np.ndarray]:
    """Apply each kernel's tanh convolution to an n x d_e input; each output
    is n x filter_out_channels."""
    Eb = np.asarray(E, dtype=np.float64)[None]
    out = []
    for f, k in enumerate(config.kernel_sizes):
        spec, _ = _conv_specs(config, k)
        out.append(np.tanh(conv1d_forward_batch(Eb, spec, params.conv_w(f), params.conv_b(f)))[0])
    return out


def residual_block_forward(X, w1, b1, w2, b2, w3, b3, kernel_size: int):
    """One residual block on an n x d_in matrix; returns (n x d_out, trace)."""
    X = np.asarray(X, dtype=np.float64)
    din = X.shape[1]
    dout = w1.shape[1]
    bias = b1 is not None
    specs = (
        ConvSpec(kernel_size, din, dout, has_bias=bias),
        ConvSpec(kernel_size, dout, dout, has_bias=bias),
        ConvSpec(1, din, dout, has_bias=bias),
    )
    bt = _res_block_batch(X[None], specs, w1, b1, w2, b2, w3, b3, None)
    return bt.H[0], bt


def residual_stack_forward(
    H_m, params: ModelParams, config: ModelConfig, filter_index: int
) -> np.ndarray:
    """Sequentially apply the residual blocks of one filter."""
    if config.residual_blocks < 1:
        raise ConfigError("residual_stack_forward requires residual_blocks >= 1")
    f = filter_index
    X = np.asarray(H_m, dtype=np.float64)
    for i in range(config.residual_blocks):
        X, _ = residual_block_forward(
            X,
            params.res(f, i, "w1"),
            params.res(f, i, "b1"),
            params.res(f, i, "w2"),
            params.res(f, i, "b2"),
            params.res(f, i, "w3"),
            params.res(f, i, "b3"),
            config.kernel_sizes[f],
        )
    return X


def concat_features(tops: list[np.ndarray]) -> np.ndarray:
    """Column-wise concatenation of the per-filter outputs, in filter order."""
    rows = {t.shape[0] for t in tops}
    if len(rows) != 1:
        raise ValueError(f"mismatched row counts across filters: {sorted(rows)}")
    return np.concatenate(tops, axis=1)


def attention_forward(H, U) -> tuple[np.ndarray, np.ndarray]:
    """Per-label attention: A distributes over positions (columns of H U sum
    to one down each label's column); V = A^T H collects one context row per
    label."""
    A = softmax_over_rows(matmul(H, U))
    V = matmul(A.T, np.asarray(H, dtype=np.float64))
    return A, V


def output_forward(V, W, b, mode: str = "per_label") -> tuple[np.ndarray, np.ndarray]:
    """Label logits from the attention context matrix.

    per_label: logit_i = V[i,:] . W[:,i] (+ b_i), the diagonal of V W.
    literal_row_sum: logit_i = sum_j (V W)_{ij} (+ b_i), which algebraically
    equals V (W 1) + b and collapses W to one shared vector.
    """
    V = np.asarray(V, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if mode == "per_label":
        y_hat = np.einsum("lf,fl->l", V, W)
    elif mode == "literal_row_sum":
        y_hat = V @ W.sum(axis=1)
    else:
        raise ConfigError(f"unknown output mode {mode!r}")
    if b is not None:
        y_hat = y_hat + b
    return y_hat, sigmoid_ew(y_hat)


def bce_loss(y_hat, y) -> tuple[float, np.ndarray]:
    """Label-summed binary cross entropy, computed stably from logits.

    Returns (loss, gradient w.r.t. the logits) where the gradient is
    sigmoid(y_hat) - y.
    """
    z = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = float(np.sum(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    return loss, sigmoid_ew(z) - y


def bce_loss_batch(y_hat: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over documents of the per-document label-summed BCE."""
    z = np.asarray(y_hat, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    B = z.shape[0]
    loss = float(np.sum(np.maximum(z, 0.0) - z * Y + np.log1p(np.exp(-np.abs(z))))) / B
    return loss, (sigmoid_ew(z) - Y) / B


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, config: ModelConfig, vocab_checksum: str, path) -> None:
    """Self-describing binary checkpoint.

    Layout: 4 magic bytes, uint32 LE format version, uint64 LE header length,
    UTF-8 JSON header (config, array names+shapes, vocab checksum), then the
    parameter arrays as little-endian float32 in flat-enumeration order.
    """
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "vocab_sha256": vocab_checksum,
        "arrays": [[name, list(arr.shape)] for name, arr in params.flat()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for _, arr in params.flat():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, expected_vocab_checksum: str | None = None):
    """Load (params, config, header); refuses mismatched magic/version/vocab
    and truncated files.  Arrays are widened back to float64."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint format version {version} "
            f"(this build reads version {CHECKPOINT_VERSION})"
        )
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise DataError(f"{path}: truncated checkpoint (header cut short)")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header ({e})") from e
    if expected_vocab_checksum is not None and header.get("vocab_sha256") != expected_vocab_checksum:
        raise DataError(
            f"{path}: vocabulary checksum mismatch — this checkpoint was trained "
            "with a different vocabulary/label space"
        )
    config = ModelConfig.from_dict(header["config"])
    offset = 16 + hlen
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        nbytes = count * 4
        if offset + nbytes > len(data):
            raise DataError(f"{path}: truncated checkpoint (array {name!r} cut short)")
        arrays[name] = (
            np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes after parameter arrays")
    params = ModelParams(config, arrays)
    return params, config, header
