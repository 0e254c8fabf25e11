"""Neural primitives with exact, hand-derived backward passes.

Everything is plain numpy. Forward functions return ``(output, cache)`` and
each has a matching backward function that consumes the cache and an upstream
gradient, returning input and parameter gradients. The layer set is exactly
what the sequence models need: dense, LSTM cell, masked (bi)directional LSTM
layers, mean pooling over valid steps, highway layers, fused-sigmoid BCE, MSE
and Adam.

Sequence inputs may be a single window (W x I) or a batch (B x W x I); single
windows are promoted internally and squeezed on return. Padded steps (mask 0)
produce zero output and leave the recurrent state untouched, so padding never
leaks into real steps in either direction.

Training runs in float32; pass float64 arrays (and params built with
``dtype=np.float64``) for finite-difference verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError, ValidationError

GATE_ORDER = ("input", "forget", "cell", "output")  # slices of the 4H axis

ACTIVATIONS = ("identity", "sigmoid", "tanh", "relu")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z)
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    # exp is only ever taken of a non-positive argument, so it cannot overflow.
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class LstmLayerParams:
    """One direction of one LSTM layer.

    ``w_ih``: (4H, I), ``w_hh``: (4H, H), ``b``: (4H,) with gate order
    (input, forget, cell candidate, output) along the 4H axis.
    """

    w_ih: np.ndarray
    w_hh: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    def __post_init__(self) -> None:
        h = self.w_hh.shape[1]
        if self.w_ih.shape[0] != 4 * h or self.w_hh.shape[0] != 4 * h or self.b.shape != (4 * h,):
            raise ValidationError(
                f"inconsistent LSTM shapes: w_ih {self.w_ih.shape}, w_hh {self.w_hh.shape}, b {self.b.shape}"
            )


@dataclass(frozen=True)
class HighwayParams:
    """Square transform path (w_h, b_h) and gate path (w_t, b_t)."""

    w_h: np.ndarray
    b_h: np.ndarray
    w_t: np.ndarray
    b_t: np.ndarray

    @property
    def dim(self) -> int:
        return self.w_h.shape[0]

    def __post_init__(self) -> None:
        d = self.w_h.shape[0]
        if (
            self.w_h.shape != (d, d)
            or self.w_t.shape != (d, d)
            or self.b_h.shape != (d,)
            or self.b_t.shape != (d,)
        ):
            raise ValidationError(f"highway params must be square/consistent, got w_h {self.w_h.shape}")


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape).astype(dtype)


def init_lstm_params(
    rng: np.random.Generator, in_dim: int, hidden: int, dtype=np.float32
) -> LstmLayerParams:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights; forget bias 1.0."""
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden : 2 * hidden] = 1.0
    return LstmLayerParams(
        w_ih=_uniform(rng, (4 * hidden, in_dim), in_dim, dtype),
        w_hh=_uniform(rng, (4 * hidden, hidden), hidden, dtype),
        b=b,
    )


def init_highway_params(rng: np.random.Generator, dim: int, dtype=np.float32) -> HighwayParams:
    """Gate bias starts at -1 so the layer opens near the identity map."""
    return HighwayParams(
        w_h=_uniform(rng, (dim, dim), dim, dtype),
        b_h=np.zeros(dim, dtype=dtype),
        w_t=_uniform(rng, (dim, dim), dim, dtype),
        b_t=np.full(dim, -1.0, dtype=dtype),
    )


def init_dense_params(
    rng: np.random.Generator, in_dim: int, out_dim: int, dtype=np.float32
) -> tuple[np.ndarray, np.ndarray]:
    return _uniform(rng, (out_dim, in_dim), in_dim, dtype), np.zeros(out_dim, dtype=dtype)


# ---------------------------------------------------------------------------
# dense


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, activation: str = "identity"):
    """y = act(x @ w.T + b) for x of shape (B, I), w of shape (O, I)."""
    if activation not in ACTIVATIONS:
        raise ValidationError(f"unknown activation {activation!r}")
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValidationError(
            f"dense shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}"
        )
    z = x @ w.T + b
    if activation == "identity":
        y = z
    elif activation == "sigmoid":
        y = sigmoid(z)
    elif activation == "tanh":
        y = np.tanh(z)
    else:
        y = np.maximum(z, 0)
    cache = (x, w, z, y, activation)
    return y, cache


def dense_backward(dy: np.ndarray, cache):
    """Gradients (dx, dw, db) for dense_forward."""
    x, w, z, y, activation = cache
    if activation == "identity":
        dz = dy
    elif activation == "sigmoid":
        dz = dy * y * (1.0 - y)
    elif activation == "tanh":
        dz = dy * (1.0 - y * y)
    else:
        dz = dy * (z > 0)
    dw = dz.T @ x
    db = dz.sum(axis=0)
    dx = dz @ w
    return dx, dw, db


# ---------------------------------------------------------------------------
# LSTM cell and masked layers


def _promote(a: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(a)
    if a.ndim == ndim - 1:
        return a[None], True
    if a.ndim != ndim:
        raise ValidationError(f"expected a {ndim - 1}- or {ndim}-dimensional array, got shape {a.shape}")
    return a, False


def lstm_cell_step(x: np.ndarray, h: np.ndarray, c: np.ndarray, p: LstmLayerParams):
    """One LSTM step: sigmoid gates i/f/o, tanh candidate g.

    c' = f*c + i*g and h' = o*tanh(c'). Accepts single vectors (I,), (H,) or
    batches (B, I), (B, H); returns (h', c', cache) with matching shapes.
    """
    x2, squeezed = _promote(x, 2)
    h2, _ = _promote(h, 2)
    c2, _ = _promote(c, 2)
    hid = p.hidden
    if x2.shape[1] != p.w_ih.shape[1] or h2.shape[1] != hid or c2.shape[1] != hid:
        raise ValidationError(
            f"LSTM step shape mismatch: x {x2.shape}, h {h2.shape}, c {c2.shape}, "
            f"w_ih {p.w_ih.shape}"
        )
    gates = x2 @ p.w_ih.T + h2 @ p.w_hh.T + p.b
    i = sigmoid(gates[:, :hid])
    f = sigmoid(gates[:, hid : 2 * hid])
    g = np.tanh(gates[:, 2 * hid : 3 * hid])
    o = sigmoid(gates[:, 3 * hid :])
    c_new = f * c2 + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    cache = (x2, h2, c2, i, f, g, o, tanh_c, p)
    if squeezed:
        return h_new[0], c_new[0], cache
    return h_new, c_new, cache


def lstm_cell_backward(dh: np.ndarray, dc: np.ndarray, cache):
    """Gradients for one LSTM step.

    ``dh``/``dc`` are upstream gradients w.r.t. h' and c'. Returns
    (dx, dh_prev, dc_prev, (dw_ih, dw_hh, db)).
    """
    x2, h2, c2, i, f, g, o, tanh_c, p = cache
    dh2, squeezed = _promote(dh, 2)
    dc2, _ = _promote(dc, 2)
    do = dh2 * tanh_c
    dc_total = dc2 + dh2 * o * (1.0 - tanh_c * tanh_c)
    di = dc_total * g
    df = dc_total * c2
    dg = dc_total * i
    dc_prev = dc_total * f
    d_gates = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=1,
    )
    dw_ih = d_gates.T @ x2
    dw_hh = d_gates.T @ h2
    db = d_gates.sum(axis=0)
    dx = d_gates @ p.w_ih
    dh_prev = d_gates @ p.w_hh
    if squeezed:
        return dx[0], dh_prev[0], dc_prev[0], (dw_ih, dw_hh, db)
    return dx, dh_prev, dc_prev, (dw_ih, dw_hh, db)


def lstm_layer_forward(
    seq: np.ndarray, p: LstmLayerParams, mask: np.ndarray | None = None, reverse: bool = False
):
    """Run one direction over a sequence; padded steps are carried through.

    ``seq`` is (B, W, I) or (W, I); ``mask`` is (B, W) or (W,) with 1.0 for
    real steps. Output step t is mask_t * h_t, so padded steps emit zeros and
    do not advance the recurrent state.
    """
    seq3, squeezed = _promote(seq, 3)
    batch, width, _ = seq3.shape
    hid = p.hidden
    mask2 = None
    if mask is not None:
        mask2, _ = _promote(np.asarray(mask, dtype=seq3.dtype), 2)
        if mask2.shape != (batch, width):
            raise ValidationError(f"mask shape {mask2.shape} does not match sequence {seq3.shape}")
    h = np.zeros((batch, hid), dtype=seq3.dtype)
    c = np.zeros((batch, hid), dtype=seq3.dtype)
    out = np.zeros((batch, width, hid), dtype=seq3.dtype)
    order = range(width - 1, -1, -1) if reverse else range(width)
    step_caches = []
    for t in order:
        h_new, c_new, cc = lstm_cell_step(seq3[:, t], h, c, p)
        if mask2 is None:
            out[:, t] = h_new
            h, c = h_new, c_new
        else:
            m = mask2[:, t][:, None]
            out[:, t] = h_new * m
            h = h_new * m + h * (1.0 - m)
            c = c_new * m + c * (1.0 - m)
        step_caches.append((t, cc))
    cache = (step_caches, mask2, seq3.shape, squeezed, p)
    return (out[0] if squeezed else out), cache


def lstm_layer_backward(dout: np.ndarray, cache):
    """Gradients for lstm_layer_forward: (dseq, (dw_ih, dw_hh, db))."""
    step_caches, mask2, seq_shape, squeezed, p = cache
    dout3, _ = _promote(dout, 3)
    batch, width, hid = dout3.shape
    dseq = np.zeros(seq_shape, dtype=dout3.dtype)
    dw_ih = np.zeros_like(p.w_ih)
    dw_hh = np.zeros_like(p.w_hh)
    db = np.zeros_like(p.b)
    dh_state = np.zeros((batch, hid), dtype=dout3.dtype)
    dc_state = np.zeros((batch, hid), dtype=dout3.dtype)
    for t, cc in reversed(step_caches):
        if mask2 is None:
            dh_new = dout3[:, t] + dh_state
            dc_new = dc_state
            carry_h = 0.0
            carry_c = 0.0
        else:
            m = mask2[:, t][:, None]
            dh_new = (dout3[:, t] + dh_state) * m
            dc_new = dc_state * m
            carry_h = dh_state * (1.0 - m)
            carry_c = dc_state * (1.0 - m)
        dx, dh_prev, dc_prev, (gw_ih, gw_hh, gb) = lstm_cell_backward(dh_new, dc_new, cc)
        dseq[:, t] = dx
        dw_ih += gw_ih
        dw_hh += gw_hh
        db += gb
        dh_state = dh_prev + carry_h
        dc_state = dc_prev + carry_c
    return (dseq[0] if squeezed else dseq), (dw_ih, dw_hh, db)


BiLstmLayer = tuple[LstmLayerParams, LstmLayerParams]


def bilstm_forward(
    seq: np.ndarray, layers: list[BiLstmLayer], mask: np.ndarray | None = None
):
    """Stacked bidirectional LSTM; per step the two directions concatenate.

    Layer k > 1 consumes the 2H-wide output of layer k - 1, so input sizes
    must chain (checked against each layer's w_ih).
    """
    x = seq
    caches = []
    for depth, (fwd, bwd) in enumerate(layers):
        x3, _ = _promote(x, 3)
        if x3.shape[2] != fwd.w_ih.shape[1] or x3.shape[2] != bwd.w_ih.shape[1]:
            raise ValidationError(
                f"bilstm layer {depth}: input width {x3.shape[2]} does not match "
                f"w_ih {fwd.w_ih.shape}"
            )
        out_f, cache_f = lstm_layer_forward(x, fwd, mask, reverse=False)
        out_b, cache_b = lstm_layer_forward(x, bwd, mask, reverse=True)
        x = np.concatenate([out_f, out_b], axis=-1)
        caches.append((cache_f, cache_b))
    return x, caches


def bilstm_backward(dout: np.ndarray, caches):
    """Gradients for bilstm_forward: (dseq, [(dfwd, dbwd), ...])."""
    grads: list[tuple] = []
    d = dout
    for cache_f, cache_b in reversed(caches):
        hid = cache_f[4].hidden
        dseq_f, gf = lstm_layer_backward(d[..., :hid], cache_f)
        dseq_b, gb = lstm_layer_backward(d[..., hid:], cache_b)
        d = dseq_f + dseq_b
        grads.append((gf, gb))
    grads.reverse()
    return d, grads


def masked_mean_pool(seq_out: np.ndarray, mask: np.ndarray | None = None):
    """Mean over valid steps of a (B, W, H) sequence output -> (B, H)."""
    x3, squeezed = _promote(seq_out, 3)
    if mask is None:
        counts = np.full(x3.shape[0], x3.shape[1], dtype=x3.dtype)
        pooled = x3.sum(axis=1) / counts[:, None]
        cache = (None, counts, x3.shape, squeezed)
    else:
        mask2, _ = _promote(np.asarray(mask, dtype=x3.dtype), 2)
        counts = mask2.sum(axis=1)
        if np.any(counts < 1):
            raise ValidationError("every window must contain at least one valid step")
        pooled = (x3 * mask2[:, :, None]).sum(axis=1) / counts[:, None]
        cache = (mask2, counts, x3.shape, squeezed)
    return (pooled[0] if squeezed else pooled), cache


def masked_mean_pool_backward(dpooled: np.ndarray, cache):
    mask2, counts, shape, squeezed = cache
    dp2, _ = _promote(dpooled, 2)
    dseq = np.repeat((dp2 / counts[:, None])[:, None, :], shape[1], axis=1)
    if mask2 is not None:
        dseq = dseq * mask2[:, :, None]
    return dseq[0] if squeezed else dseq


# ---------------------------------------------------------------------------
# highway


def highway_forward(x: np.ndarray, p: HighwayParams):
    """y = t * relu(x W_h^T + b_h) + (1 - t) * x with t = sigmoid(x W_t^T + b_t)."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != p.dim:
        raise ValidationError(f"highway expects (B, {p.dim}), got {x.shape}")
    t = sigmoid(x @ p.w_t.T + p.b_t)
    z_h = x @ p.w_h.T + p.b_h
    h = np.maximum(z_h, 0)
    y = t * h + (1.0 - t) * x
    cache = (x, t, z_h, h, p)
    return y, cache


def highway_backward(dy: np.ndarray, cache):
    """Gradients for highway_forward: (dx, (dw_h, db_h, dw_t, db_t))."""
    x, t, z_h, h, p = cache
    dt = dy * (h - x)
    dh = dy * t
    dz_h = dh * (z_h > 0)
    dz_t = dt * t * (1.0 - t)
    dw_h = dz_h.T @ x
    db_h = dz_h.sum(axis=0)
    dw_t = dz_t.T @ x
    db_t = dz_t.sum(axis=0)
    dx = dy * (1.0 - t) + dz_h @ p.w_h + dz_t @ p.w_t
    return dx, (dw_h, db_h, dw_t, db_t)


# ---------------------------------------------------------------------------
# losses


def bce_loss(logits: np.ndarray, targets: np.ndarray):
    """Binary cross-entropy fused with the sigmoid, on raw logits.

    loss = mean(max(z, 0) - z*y + log(1 + exp(-|z|))), finite for any finite
    logit; gradient w.r.t. the logits is (sigmoid(z) - y) / B.
    """
    z = np.asarray(logits)
    y = np.asarray(targets, dtype=z.dtype)
    if z.shape != y.shape:
        raise ValidationError(f"logits {z.shape} and targets {y.shape} must match")
    losses = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    dlogits = (sigmoid(z) - y) / z.size
    return float(losses.mean()), dlogits


def mse_loss(preds: np.ndarray, targets: np.ndarray):
    """Mean squared error; gradient w.r.t. predictions is 2(p - y)/B."""
    p = np.asarray(preds)
    y = np.asarray(targets, dtype=p.dtype)
    if p.shape != y.shape:
        raise ValidationError(f"predictions {p.shape} and targets {y.shape} must match")
    diff = p - y
    return float(np.mean(diff * diff)), 2.0 * diff / p.size


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to the parameter arrays in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"gradient shape {g.shape} mismatches parameter {name!r} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
