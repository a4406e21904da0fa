"""Dense float64 kernel: 1-D convolution with explicit backward, activations,
dropout, Adam, and a finite-difference gradient checker.

Conventions
-----------
A "matrix" is a 2-D ``numpy.ndarray`` of float64 with row-major semantics.
Sequence data puts positions on rows and channels on columns, so a document
of length ``n`` with ``c`` channels is an ``n x c`` matrix.  Batched variants
take ``(batch, positions, channels)`` arrays and reduce to the 2-D contract
at batch size 1.

The convolution is implemented as a window gather (one contiguous ``n x (k*c)``
column matrix) followed by a single matmul, which is where essentially all of
the training time goes; the backward pass is the hand-derived transpose of
that pipeline (matmul adjoints plus an overlap-add scatter of the window
gradients).  Summation order per output cell is fixed, so results do not
depend on how the underlying BLAS partitions the work.

Set the environment variable ``MULTIRESCNN_DEBUG_NAN=1`` to check every op's
output for NaN/Inf (raises :class:`~multirescnn.errors.NumericError`).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError

__all__ = [
    "ConvSpec",
    "AdamState",
    "conv1d_forward",
    "conv1d_backward",
    "conv1d_forward_batch",
    "conv1d_backward_batch",
    "matmul",
    "tanh_ew",
    "sigmoid_ew",
    "softmax_over_rows",
    "dropout",
    "adam_step",
    "grad_check",
    "debug_nan_enabled",
]


def debug_nan_enabled() -> bool:
    return os.environ.get("MULTIRESCNN_DEBUG_NAN", "") not in ("", "0")


def _debug_check(name: str, *arrays) -> None:
    if not debug_nan_enabled():
        return
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite values detected in output of {name}")


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a same-length 1-D convolution.

    With an odd kernel, padding floor(k/2) and stride 1, the output has the
    same number of rows as the input.
    """

    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    has_bias: bool = True

    def __post_init__(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(
                f"kernel_size must be odd and >= 1, got {self.kernel_size}"
            )
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.stride != 1:
            raise ConfigError("only stride 1 is supported")

    @property
    def padding(self) -> int:
        return self.kernel_size // 2

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.kernel_size * self.in_channels, self.out_channels)


def _check_conv_shapes(X, spec: ConvSpec, W, b) -> None:
    if X.ndim != 3:
        raise ValueError(f"expected 3-D (batch, n, c_in) input, got shape {X.shape}")
    if X.shape[2] != spec.in_channels:
        raise ValueError(
            f"input channel mismatch: expected {spec.in_channels}, got {X.shape[2]}"
        )
    if W.shape != spec.weight_shape:
        raise ValueError(
            f"weight shape mismatch: expected {spec.weight_shape}, got {W.shape}"
        )
    if spec.has_bias:
        if b is None or b.shape != (spec.out_channels,):
            got = None if b is None else b.shape
            raise ValueError(
                f"bias shape mismatch: expected {(spec.out_channels,)}, got {got}"
            )
    elif b is not None:
        raise ValueError("bias given but spec.has_bias is False")


def _window_cols(X, spec: ConvSpec):
    """Gather sliding windows of a zero-padded batch.

    X: (B, n, c_in) -> cols: (B, n, k*c_in), where cols[b, j] is the
    row-major flattening of rows j-k//2 .. j+k//2 of X[b] (zeros outside).
    """
    B, n, cin = X.shape
    k, p = spec.kernel_size, spec.padding
    Xp = np.zeros((B, n + 2 * p, cin), dtype=np.float64)
    Xp[:, p : p + n, :] = X
    idx = np.arange(n)[:, None] + np.arange(k)[None, :]
    return Xp[:, idx, :].reshape(B, n, k * cin)


def conv1d_forward_batch(X, spec: ConvSpec, W, b=None):
    """Same-length 1-D convolution over a batch: (B, n, c_in) -> (B, n, c_out)."""
    _check_conv_shapes(X, spec, W, b)
    B, n, _ = X.shape
    cols = _window_cols(X, spec)
    out = cols.reshape(B * n, -1) @ W
    out = out.reshape(B, n, spec.out_channels)
    if b is not None:
        out += b
    _debug_check("conv1d_forward", out)
    return out


def conv1d_backward_batch(X, spec: ConvSpec, W, grad_out):
    """Gradients of sum(grad_out * conv1d_forward_batch(X)) w.r.t. X, W, b."""
    _check_conv_shapes(X, spec, W, None if not spec.has_bias else np.zeros(spec.out_channels))
    B, n, cin = X.shape
    if grad_out.shape != (B, n, spec.out_channels):
        raise ValueError(
            f"grad_out shape mismatch: expected {(B, n, spec.out_channels)}, "
            f"got {grad_out.shape}"
        )
    k, p = spec.kernel_size, spec.padding
    cols = _window_cols(X, spec).reshape(B * n, k * cin)
    g2 = grad_out.reshape(B * n, spec.out_channels)

    grad_W = cols.T @ g2
    grad_b = g2.sum(axis=0) if spec.has_bias else None

    gcols = (g2 @ W.T).reshape(B, n, k, cin)
    gXp = np.zeros((B, n + 2 * p, cin), dtype=np.float64)
    for t in range(k):  # overlap-add, one slice per kernel offset
        gXp[:, t : t + n, :] += gcols[:, :, t, :]
    grad_X = gXp[:, p : p + n, :]
    _debug_check("conv1d_backward", grad_X, grad_W, grad_b)
    return grad_X, grad_W, grad_b


def conv1d_forward(X, spec: ConvSpec, W, b=None):
    """2-D single-document contract: (n, c_in) -> (n, c_out)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected 2-D (n, c_in) input, got shape {X.shape}")
    return conv1d_forward_batch(X[None], spec, W, b)[0]


def conv1d_backward(X, spec: ConvSpec, W, grad_out):
    """2-D single-document backward; see :func:`conv1d_backward_batch`."""
    X = np.asarray(X, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected 2-D (n, c_in) input, got shape {X.shape}")
    gX, gW, gb = conv1d_backward_batch(X[None], spec, W, grad_out[None])
    return gX[0], gW, gb


def matmul(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {A.shape} and {B.shape}")
    if A.shape[1] != B.shape[0]:
        raise ValueError(
            f"matmul inner dimension mismatch: {A.shape} @ {B.shape}"
        )
    out = A @ B
    _debug_check("matmul", out)
    return out


def tanh_ew(M):
    out = np.tanh(np.asarray(M, dtype=np.float64))
    _debug_check("tanh_ew", out)
    return out


def sigmoid_ew(M):
    """Numerically stable logistic function (sign-split; never under/overflows)."""
    M = np.asarray(M, dtype=np.float64)
    out = np.empty_like(M)
    pos = M >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-M[pos]))
    e = np.exp(M[~pos])
    out[~pos] = e / (1.0 + e)
    _debug_check("sigmoid_ew", out)
    return out


def softmax_over_rows(M):
    """Normalize each column of an n x l matrix into a distribution over the
    n row positions (per-column max subtraction for stability)."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"expected 2-D input, got shape {M.shape}")
    Z = M - M.max(axis=0, keepdims=True)
    E = np.exp(Z)
    out = E / E.sum(axis=0, keepdims=True)
    _debug_check("softmax_over_rows", out)
    return out


def dropout(M, rate: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout.

    Training: zero each entry with probability ``rate`` and scale survivors
    by 1/(1-rate).  Inference (or rate 0): identity.  Returns (output, mask)
    where mask is the binary keep indicator.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    M = np.asarray(M, dtype=np.float64)
    if not training or rate == 0.0:
        return M, np.ones_like(M)
    if rng is None:
        raise ValueError("dropout in training mode requires an rng")
    mask = (rng.random(M.shape) >= rate).astype(np.float64)
    return M * mask / (1.0 - rate), mask


@dataclass
class AdamState:
    """First/second moment accumulators for a fixed parameter enumeration."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One Adam update with bias correction, in place over ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state lengths disagree")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(
    loss_fn: Callable[[], float],
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    h: float = 1e-6,
) -> float:
    """Max relative error between ``grads`` and central finite differences.

    ``loss_fn`` must recompute the (deterministic) loss from the current
    contents of ``params``; entries are perturbed in place and restored.
    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            lp = loss_fn()
            flat_p[i] = orig - h
            lm = loss_fn()
            flat_p[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("non-finite loss during gradient check")
            numeric = (lp - lm) / (2.0 * h)
            denom = max(abs(flat_g[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(flat_g[i] - numeric) / denom)
    return worst
