"""Conditioned residual transformer block and the condition embedder.

One block computes `h + F(h, cond)` where F is a feed-forward applied to the
layer-normed result of an inner attention residual. Conditioning enters as
per-sub-layer shift/scale/gate modulation derived from a single condition
vector. Residual output projections and the modulation map start at zero, so
a fresh block is exactly the identity; gates are parameterized as `1 + raw`
so the zero-initialized modulation is neutral rather than silencing the
block's gradients.

Block parameters are immutable during forward evaluation; concurrent
forwards over shared parameters are safe, updates need exclusive access.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mul,
    narrow,
    reshape,
    scale,
    softmax,
    transpose,
)

LN_EPS = 1e-5

# geometric frequency ladder for the fixed sinusoidal features
_FREQ_SPAN = 16.0


@dataclass(frozen=True)
class BlockConfig:
    hidden: int
    heads: int
    mlp_ratio: int = 4
    cond_dim: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.heads < 1:
            raise ValueError("hidden and heads must be positive")
        if self.hidden % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if self.mlp_ratio < 1:
            raise ValueError("mlp_ratio must be >= 1")
        if self.cond_dim < 0:
            raise ValueError("cond_dim must be >= 0")

    @property
    def inner(self):
        return self.hidden * self.mlp_ratio

    @property
    def head_dim(self):
        return self.hidden // self.heads


def _randn(rng, shape, fan_in, dtype):
    return Tensor((rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class BlockParams:
    """Weights of one block; shapes are a pure function of BlockConfig."""

    def __init__(self, config: BlockConfig, rng, dtype):
        h, inner = config.hidden, config.inner
        self.config = config
        self.ln1_gain = _ones((h,), dtype)
        self.ln1_bias = _zeros((h,), dtype)
        self.wq = _randn(rng, (h, h), h, dtype)
        self.bq = _zeros((h,), dtype)
        self.wk = _randn(rng, (h, h), h, dtype)
        self.bk = _zeros((h,), dtype)
        self.wv = _randn(rng, (h, h), h, dtype)
        self.bv = _zeros((h,), dtype)
        # residual output projections start at zero: the block opens as identity
        self.wo = _zeros((h, h), dtype)
        self.bo = _zeros((h,), dtype)
        self.ln2_gain = _ones((h,), dtype)
        self.ln2_bias = _zeros((h,), dtype)
        self.w1 = _randn(rng, (h, inner), h, dtype)
        self.b1 = _zeros((inner,), dtype)
        self.w2 = _zeros((inner, h), dtype)
        self.b2 = _zeros((h,), dtype)
        if config.cond_dim > 0:
            self.mod_w = _zeros((config.cond_dim, 6 * h), dtype)
            self.mod_b = _zeros((6 * h,), dtype)
        else:
            self.mod_w = None
            self.mod_b = None

    _FIELDS = (
        "ln1_gain", "ln1_bias",
        "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
        "ln2_gain", "ln2_bias",
        "w1", "b1", "w2", "b2",
        "mod_w", "mod_b",
    )

    def named(self, prefix=""):
        out = {}
        for field in self._FIELDS:
            t = getattr(self, field)
            if t is not None:
                out[prefix + field] = t
        return out

    def tensors(self):
        return list(self.named().values())


def block_param_count(config: BlockConfig):
    """Exact scalar-parameter count of one block."""
    h, inner = config.hidden, config.inner
    attn = 4 * h * h + 4 * h
    ffn = h * inner + inner + inner * h + h
    norms = 4 * h
    modulation = (config.cond_dim * 6 * h + 6 * h) if config.cond_dim > 0 else 0
    return attn + ffn + norms + modulation


def count_params(config: BlockConfig, n_blocks, extras=0):
    """Parameters of `n_blocks` blocks plus `extras` scalars for embedders/heads."""
    if n_blocks < 0 or extras < 0:
        raise ValueError("n_blocks and extras must be non-negative")
    return n_blocks * block_param_count(config) + int(extras)


def _modulation_pieces(params, cond, as_vectors):
    """Split `cond @ mod_w + mod_b` into shift/scale/gate pairs per sub-layer."""
    h = params.config.hidden
    mod = add(matmul(cond, params.mod_w), params.mod_b)
    pieces = [narrow(mod, 1, k * h, h) for k in range(6)]
    if as_vectors:
        pieces = [reshape(p, (h,)) for p in pieces]
    shift1, scale1, gate1, shift2, scale2, gate2 = pieces
    return shift1, scale1, add(gate1, 1.0), shift2, scale2, add(gate2, 1.0)


def _modulate(normed, shift, scl):
    return add(mul(normed, add(scl, 1.0)), shift)


def _check_cond(params, cond):
    if params.config.cond_dim == 0:
        if cond is not None:
            raise ShapeError("block has no conditioning parameters but cond was given")
        return False
    if cond is None:
        raise ShapeError("block expects a condition vector")
    return True


def residual_block_forward(h, params, cond=None):
    """Apply one block to a single token sequence `h` of shape [tokens, hidden].

    `cond` is one condition vector of shape [cond_dim] shared by all tokens
    (None when the block was built without conditioning). Attention runs over
    the token axis; no positional information is injected.
    """
    cfg = params.config
    if h.ndim != 2 or h.shape[1] != cfg.hidden:
        raise ShapeError(f"block expects [tokens, {cfg.hidden}], got {h.shape}")
    conditioned = _check_cond(params, cond)
    if conditioned:
        if cond.ndim == 1:
            cond = reshape(cond, (1, cfg.cond_dim))
        if cond.shape != (1, cfg.cond_dim):
            raise ShapeError(f"cond must have {cfg.cond_dim} entries, got {cond.shape}")
        sh1, sc1, g1, sh2, sc2, g2 = _modulation_pieces(params, cond, as_vectors=True)

    n1 = layer_norm(h, params.ln1_gain, params.ln1_bias, LN_EPS)
    if conditioned:
        n1 = _modulate(n1, sh1, sc1)
    attn = _self_attention(n1, params)
    if conditioned:
        attn = mul(attn, g1)
    mid = add(h, attn)

    n2 = layer_norm(mid, params.ln2_gain, params.ln2_bias, LN_EPS)
    if conditioned:
        n2 = _modulate(n2, sh2, sc2)
    ff = add(matmul(gelu(add(matmul(n2, params.w1), params.b1)), params.w2), params.b2)
    if conditioned:
        ff = mul(ff, g2)
    return add(h, ff)


def _self_attention(n, params):
    cfg = params.config
    dh = cfg.head_dim
    q = add(matmul(n, params.wq), params.bq)
    k = add(matmul(n, params.wk), params.bk)
    v = add(matmul(n, params.wv), params.bv)
    contexts = []
    for i in range(cfg.heads):
        qi = narrow(q, 1, i * dh, dh)
        ki = narrow(k, 1, i * dh, dh)
        vi = narrow(v, 1, i * dh, dh)
        att = softmax(scale(matmul(qi, transpose(ki)), dh ** -0.5), axis=1)
        contexts.append(matmul(att, vi))
    ctx = contexts[0] if len(contexts) == 1 else concat(contexts, axis=1)
    return add(matmul(ctx, params.wo), params.bo)


def block_rows_forward(h, params, cond=None):
    """Apply one block to a batch of independent single-token rows.

    `h` is [rows, hidden] where every row is its own one-token sequence, so
    attention collapses to the value/output projections (softmax over a
    single key is 1). `cond` is [rows, cond_dim]. Row i of the result equals
    `residual_block_forward` on row i alone, up to float reassociation.
    """
    cfg = params.config
    if h.ndim != 2 or h.shape[1] != cfg.hidden:
        raise ShapeError(f"block expects [rows, {cfg.hidden}], got {h.shape}")
    conditioned = _check_cond(params, cond)
    if conditioned:
        if cond.shape != (h.shape[0], cfg.cond_dim):
            raise ShapeError(
                f"cond must be [rows, {cfg.cond_dim}] = [{h.shape[0]}, {cfg.cond_dim}], got {cond.shape}"
            )
        sh1, sc1, g1, sh2, sc2, g2 = _modulation_pieces(params, cond, as_vectors=False)

    n1 = layer_norm(h, params.ln1_gain, params.ln1_bias, LN_EPS)
    if conditioned:
        n1 = _modulate(n1, sh1, sc1)
    attn = add(matmul(add(matmul(n1, params.wv), params.bv), params.wo), params.bo)
    if conditioned:
        attn = mul(attn, g1)
    mid = add(h, attn)

    n2 = layer_norm(mid, params.ln2_gain, params.ln2_bias, LN_EPS)
    if conditioned:
        n2 = _modulate(n2, sh2, sc2)
    ff = add(matmul(gelu(add(matmul(n2, params.w1), params.b1)), params.w2), params.b2)
    if conditioned:
        ff = mul(ff, g2)
    return add(h, ff)


def sinusoidal_features(values, dim):
    """Fixed sin/cos features of a scalar signal, shape [..., dim]."""
    if dim < 2 or dim % 2 != 0:
        raise ValueError("feature dim must be even and >= 2")
    half = dim // 2
    freqs = _FREQ_SPAN ** (np.arange(half) / max(1, half - 1))
    ang = 2.0 * np.pi * np.asarray(values, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


@dataclass(frozen=True)
class CondConfig:
    cond_dim: int
    n_classes: int
    use_w: bool = False
    use_tau: bool = False

    def __post_init__(self):
        if self.cond_dim < 2 or self.cond_dim % 2 != 0:
            raise ValueError("cond_dim must be even and >= 2")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")


class ConditionEmbedder:
    """Builds condition vectors from (t, y, w, tau).

    Sinusoidal features of each scalar channel pass through a learned linear
    map; the class label selects a learned table row (index `n_classes` is
    the unconditional null token); everything is summed into one vector.
    Channels the owning model does not use (w for the base field, tau for
    every teacher) are simply absent, which is equivalent to pinning them.
    """

    def __init__(self, cfg: CondConfig, rng, dtype):
        self.cfg = cfg
        self.dtype = dtype
        d = cfg.cond_dim
        self.table = Tensor(
            (rng.standard_normal((cfg.n_classes + 1, d)) / np.sqrt(d)).astype(dtype),
            requires_grad=True,
        )
        self.time_map = _randn(rng, (d, d), d, dtype)
        self.w_map = _randn(rng, (d, d), d, dtype) if cfg.use_w else None
        self.tau_map = _randn(rng, (d, d), d, dtype) if cfg.use_tau else None

    def named(self, prefix=""):
        out = {prefix + "table": self.table, prefix + "time_map": self.time_map}
        if self.w_map is not None:
            out[prefix + "w_map"] = self.w_map
        if self.tau_map is not None:
            out[prefix + "tau_map"] = self.tau_map
        return out

    def _check_labels(self, y):
        y = np.asarray(y)
        if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
            raise ValueError("class labels must be a 1-D integer array")
        if y.size and (y.min() < 0 or y.max() > self.cfg.n_classes):
            raise ValueError(
                f"class label outside [0, {self.cfg.n_classes}] (index {self.cfg.n_classes} is the null token)"
            )
        return y

    def _channel(self, values, batch, linear):
        feats = sinusoidal_features(np.broadcast_to(np.asarray(values, np.float64), (batch,)),
                                    self.cfg.cond_dim).astype(self.dtype)
        return matmul(Tensor(feats), linear)

    def embed_base(self, t, y, w=None):
        """Condition vectors [batch, cond_dim] for the (t, y, w) channels."""
        y = self._check_labels(y)
        batch = y.shape[0]
        out = add(gather_rows(self.table, y), self._channel(t, batch, self.time_map))
        if self.cfg.use_w:
            if w is None:
                raise ValueError("this embedder conditions on w; pass a guidance weight")
            out = add(out, self._channel(w, batch, self.w_map))
        elif w is not None:
            raise ValueError("this embedder does not condition on w")
        return out

    def tau_term(self, tau):
        """Additive depth-coordinate term, shape [cond_dim]."""
        if self.tau_map is None:
            raise ValueError("this embedder has no depth channel")
        feats = sinusoidal_features(np.asarray([float(tau)]), self.cfg.cond_dim).astype(self.dtype)
        return reshape(matmul(Tensor(feats), self.tau_map), (self.cfg.cond_dim,))

    def embed_condition(self, t, y, w=None, tau=None):
        """Deterministic embedding of (t, y, w, tau); tau only where configured."""
        base = self.embed_base(t, y, w)
        if self.cfg.use_tau:
            if tau is None:
                raise ValueError("this embedder conditions on tau; pass a depth coordinate")
            return add(base, self.tau_term(tau))
        if tau is not None:
            raise ValueError("this embedder does not condition on tau")
        return base

    def param_count(self):
        return sum(t.size for t in self.named().values())
