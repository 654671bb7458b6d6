"""Dense float64 kernels everything else is built from.

All activations and weights in this package are plain numpy arrays in
float64, C-order. 64-bit is the reference precision: the finite-difference
gradient certification and the tighter numeric tolerances in the test suite
assume it.

Every matrix product anywhere in the model goes through :func:`matmul` so
that the multiply-accumulate counter sees the complete compute graph. A MAC
here is one fused multiply-add; reported FLOPs elsewhere are 2x the MAC
count. Elementwise work (softmax, normalization, activation functions,
residual adds) is deliberately not counted, matching the convention the
analytic cost model uses.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ShapeError

_SQRT1_2 = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# multiply-accumulate instrumentation

@dataclass
class MacCounter:
    """Accumulates multiply-accumulate counts from ops run under counting().

    count is an exact integer; enabled=False makes add() a no-op so a counter
    can be parked without tearing down the context.
    """

    count: int = 0
    enabled: bool = True

    def add(self, macs: int) -> None:
        if self.enabled:
            self.count += int(macs)

    def reset(self) -> None:
        self.count = 0


_active_counter: contextvars.ContextVar[MacCounter | None] = contextvars.ContextVar(
    "sparsecut_mac_counter", default=None
)


@contextlib.contextmanager
def counting(counter: MacCounter | None = None):
    """Route MAC counts from every op in the dynamic extent into counter.

    Yields the counter (a fresh one if none was passed). Contexts nest: the
    innermost counter wins, and the outer one resumes untouched when the
    inner block exits. The context variable is per-thread / per-context, so
    concurrent counted regions do not interfere.
    """
    if counter is None:
        counter = MacCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


def active_counter() -> MacCounter | None:
    return _active_counter.get()


# ---------------------------------------------------------------------------
# deterministic rng streams

def seeded_rng(seed: int, *path) -> np.random.Generator:
    """Deterministic PCG64 stream for a root seed plus a name path.

    The path entries (strings or ints) are folded through SHA-256 into the
    seed material, so ("encoder",) and ("decoder",) give independent streams
    that are reproducible across platforms and numpy versions; numpy's
    SeedSequence expansion is specified to be stable. Identical (seed, path)
    always yields the identical stream.
    """
    entropy = [int(seed) & _MASK64]
    if path:
        digest = hashlib.sha256("/".join(str(p) for p in path).encode("utf-8")).digest()
        entropy.extend(int.from_bytes(digest[i:i + 8], "little") for i in range(0, 32, 8))
    return np.random.default_rng(np.random.SeedSequence(entropy))


# ---------------------------------------------------------------------------
# primitive ops

def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """2-D matrix product, counted as m*k*n MACs when a counter is active."""
    a = _as_matrix(a, "left operand")
    b = _as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    counter = _active_counter.get()
    if counter is not None:
        counter.add(a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def softmax_rows(a) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting each row's max.

    The subtraction makes the exponentials safe for arbitrarily large
    finite inputs without changing the mathematical result. Each output
    row is nonnegative and sums to 1.
    """
    a = _as_matrix(a, "softmax input")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row to zero mean / unit variance, then apply affine.

    Variance is the biased (1/D) estimate. eps sits inside the square root;
    the default 1e-5 matches common transformer practice, callers that need
    the pure mathematical normalization pass something tiny.
    """
    out, _, _ = layer_norm_stats(a, gain, bias, eps)
    return out


def layer_norm_stats(a, gain, bias, eps: float = 1e-5):
    """layer_norm that also returns (normalized rows, 1/std) for backward."""
    a = _as_matrix(a, "layer_norm input")
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if gain.shape != (a.shape[1],) or bias.shape != (a.shape[1],):
        raise ShapeError(
            f"gain/bias must have shape ({a.shape[1]},), got {gain.shape} and {bias.shape}"
        )
    mean = a.mean(axis=1, keepdims=True)
    var = ((a - mean) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a - mean) * inv_std
    return xhat * gain + bias, xhat, inv_std


def scaled_dot_attention(q, k, v, causal: bool = False) -> np.ndarray:
    """Single-head attention: softmax(q k^T / sqrt(d)) v.

    With causal=True, position t may only attend to positions <= t; the
    mask is applied as -inf before the softmax, so masked weights are
    exactly 0.0 and future positions contribute nothing, bit for bit.
    Causal masking requires a square attention matrix (q and k the same
    length), because the mask is defined by shared positions.
    """
    q = _as_matrix(q, "query")
    k = _as_matrix(k, "key")
    v = _as_matrix(v, "value")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key count {k.shape[0]} != value count {v.shape[0]}")
    if causal and q.shape[0] != k.shape[0]:
        raise ShapeError(
            f"causal attention needs square scores, got {q.shape[0]} queries "
            f"over {k.shape[0]} keys"
        )
    scores = matmul(q, k.T) / np.sqrt(q.shape[1])
    if causal:
        mask = np.triu(np.ones(scores.shape, dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
    weights = softmax_rows(scores)
    return matmul(weights, v)


def gelu(x) -> np.ndarray:
    """Exact GELU, x * Phi(x), with Phi the standard normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x * _SQRT1_2))


def gelu_grad(x) -> np.ndarray:
    """d/dx of exact GELU: Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + erf(x * _SQRT1_2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


# ---------------------------------------------------------------------------
# composite blocks shared by encoder and decoder

def multi_head_attention(x_query, x_context, w_query, w_key, w_value, w_out,
                         heads: int, causal: bool = False) -> np.ndarray:
    """Multi-head attention with bias-free projections.

    x_query supplies the queries, x_context the keys and values (pass the
    same array for self-attention). All four weight matrices are [D, D];
    heads must divide D, and each head is scaled by its own head width.
    """
    x_query = _as_matrix(x_query, "attention query input")
    x_context = _as_matrix(x_context, "attention context input")
    dim = x_query.shape[1]
    if heads < 1 or dim % heads != 0:
        raise ShapeError(f"heads={heads} must divide model dim {dim}")
    q = matmul(x_query, w_query)
    k = matmul(x_context, w_key)
    v = matmul(x_context, w_value)
    head_dim = dim // heads
    pieces = []
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        pieces.append(scaled_dot_attention(q[:, cols], k[:, cols], v[:, cols], causal=causal))
    return matmul(np.concatenate(pieces, axis=1), w_out)


def mlp(x, w_in, w_out) -> np.ndarray:
    """Two-layer feed-forward with GELU in between, no biases."""
    return matmul(gelu(matmul(x, w_in)), w_out)


def check_finite(name: str, *arrays) -> None:
    from .errors import NumericError

    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"{name} contains non-finite values")
