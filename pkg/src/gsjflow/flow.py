"""Toy-scale autoregressive coupling blocks and their exact transforms.

A block maps x -> z by z_t = exp(-s_t) * (x_t - u_t), where the log-scale s
and shift u at position t are produced by a causal transformer stack fed
with positions strictly before t. The forward direction evaluates every
position in one parallel pass; the exact inverse must walk positions one at
a time, which is what the samplers module accelerates.

Causality is realized structurally: the stack lets position t attend to
positions <= t, and the projected outputs are then shifted right by one
position with zero fill, so s_1 = u_1 = 0 always and z_1 = x_1.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, NumericalOverflowError
from .validation import as_tensor3, max_finite_abs

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(eq=False)
class AttentionLayer:
    """One pre-norm transformer layer: causal attention plus a 2-layer MLP."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    mlp_w1: np.ndarray
    mlp_w2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    @property
    def channels(self) -> int:
        return self.wq.shape[0]

    @property
    def hidden(self) -> int:
        return self.mlp_w1.shape[1]

    def validate(self) -> None:
        c, h = self.channels, self.hidden
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (c, c):
                raise DimensionMismatchError(f"{name} must be ({c}, {c})")
        if self.mlp_w1.shape != (c, h) or self.mlp_w2.shape != (h, c):
            raise DimensionMismatchError("mlp weights inconsistent with (C, H)")
        if h < c:
            raise DimensionMismatchError(f"hidden width {h} < channels {c}")
        for name in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            if getattr(self, name).shape != (c,):
                raise DimensionMismatchError(f"{name} must be length {c}")


@dataclass(eq=False)
class FlowBlock:
    """Weights of one coupling block: attention stack, a final norm, and
    the project-out maps for log-scale and shift.

    The final norm bounds what the projections see, so the scale factors
    exp(+-s) stay bounded no matter how large the sequence values grow;
    without it the exact inverse itself can run away for strongly-coupled
    blocks.
    """

    layers: list[AttentionLayer]
    ln_f_gain: np.ndarray
    ln_f_bias: np.ndarray
    w_s: np.ndarray
    b_s: np.ndarray
    w_u: np.ndarray
    b_u: np.ndarray
    flip: bool = False

    @property
    def channels(self) -> int:
        return self.w_s.shape[0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def validate(self) -> None:
        if not self.layers:
            raise DimensionMismatchError("block needs at least one layer")
        c = self.channels
        for layer in self.layers:
            layer.validate()
            if layer.channels != c:
                raise DimensionMismatchError("layer width differs from block width")
        for name in ("w_s", "w_u"):
            if getattr(self, name).shape != (c, c):
                raise DimensionMismatchError(f"{name} must be ({c}, {c})")
        for name in ("b_s", "b_u", "ln_f_gain", "ln_f_bias"):
            if getattr(self, name).shape != (c,):
                raise DimensionMismatchError(f"{name} must be length {c}")


@dataclass
class ModelConfig:
    """Model hyperparameters, mirroring the bracket shorthand
    [patch - channels - blocks - depth - noise]."""

    channels: int
    blocks: int
    depth: int = 2
    hidden: int | None = None
    patch_size: int = 4
    noise_std: float = 0.05
    seq_len: int = 64

    def __post_init__(self) -> None:
        if self.hidden is None:
            self.hidden = 4 * self.channels
        if self.channels < 1 or self.blocks < 1 or self.depth < 1:
            raise DimensionMismatchError("channels, blocks, depth must be >= 1")
        if self.hidden < self.channels:
            raise DimensionMismatchError("hidden width must be >= channels")
        if self.seq_len < 1 or self.patch_size < 1:
            raise DimensionMismatchError("seq_len and patch_size must be >= 1")


@dataclass(eq=False)
class FlowModel:
    """Ordered stack of blocks; adjacent blocks normally alternate flip."""

    blocks: list[FlowBlock] = field(default_factory=list)
    config: ModelConfig | None = None

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def validate(self) -> None:
        if not self.blocks:
            raise DimensionMismatchError("model has no blocks")
        for block in self.blocks:
            block.validate()
        if self.config is not None:
            if self.config.blocks != len(self.blocks):
                raise DimensionMismatchError("config.blocks differs from block count")
            for block in self.blocks:
                if block.channels != self.config.channels:
                    raise DimensionMismatchError("block width differs from config")


def flip_seq(x: np.ndarray) -> np.ndarray:
    """Reverse the sequence axis (returns a copy)."""
    return np.ascontiguousarray(x[:, ::-1, :])


def _layer_norm(h, gain, bias):
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    return (h - mu) / np.sqrt(var + LN_EPS) * gain + bias


def _gelu(v):
    return 0.5 * v * (1.0 + np.tanh(_GELU_C * (v + 0.044715 * v * v * v)))


@functools.lru_cache(maxsize=128)
def _causal_mask(t_len: int) -> np.ndarray:
    mask = np.tril(np.ones((t_len, t_len), dtype=bool))
    mask.setflags(write=False)
    return mask


def _attention_full(layer: AttentionLayer, h: np.ndarray) -> np.ndarray:
    """Causal attention over all positions at once; position t sees <= t."""
    hn = _layer_norm(h, layer.ln1_gain, layer.ln1_bias)
    q = hn @ layer.wq
    k = hn @ layer.wk
    v = hn @ layer.wv
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(layer.channels)
    scores = np.where(_causal_mask(h.shape[1]), scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    return (w @ v) @ layer.wo


def _layer_full(layer: AttentionLayer, h: np.ndarray) -> np.ndarray:
    h = h + _attention_full(layer, h)
    hn = _layer_norm(h, layer.ln2_gain, layer.ln2_bias)
    return h + _gelu(hn @ layer.mlp_w1) @ layer.mlp_w2


def stack_forward(block: FlowBlock, x: np.ndarray) -> np.ndarray:
    """Attention stack plus final norm; position t depends on x_{<=t}."""
    h = x
    for layer in block.layers:
        h = _layer_full(layer, h)
    return _layer_norm(h, block.ln_f_gain, block.ln_f_bias)


def scale_shift(block: FlowBlock, x) -> tuple[np.ndarray, np.ndarray]:
    """Log-scale s and shift u for every position, in one parallel pass.

    The projected stack outputs are shifted right by one position so that
    (s_t, u_t) depend only on x_{<t}; position 1 is exactly zero.
    """
    x = as_tensor3(x, channels=block.channels)
    h = stack_forward(block, x)
    ps = h @ block.w_s + block.b_s
    pu = h @ block.w_u + block.b_u
    s = np.zeros_like(ps)
    u = np.zeros_like(pu)
    s[:, 1:, :] = ps[:, :-1, :]
    u[:, 1:, :] = pu[:, :-1, :]
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u))):
        raise NumericalOverflowError("scale/shift evaluation overflowed",
                                     max_abs=max_finite_abs(ps))
    return s, u


def exp_scale(s: np.ndarray, clamp: float | None = None) -> tuple[np.ndarray, int]:
    """exp(s), optionally clamping s to [-clamp, clamp] first.

    Returns the scale factors and how many entries were clamped. Clamping
    is off by default; samplers prefer to abort on overflow rather than
    silently saturate.
    """
    n_clamped = 0
    if clamp is not None:
        clipped = np.clip(s, -clamp, clamp)
        n_clamped = int((clipped != s).sum())
        s = clipped
    with np.errstate(over="ignore"):
        return np.exp(s), n_clamped


def forward_block(block: FlowBlock, x) -> np.ndarray:
    """Data -> noise for one block: z_t = exp(-s_t) * (x_t - u_t)."""
    x = as_tensor3(x, channels=block.channels)
    s, u = scale_shift(block, x)
    with np.errstate(over="ignore", invalid="ignore"):
        z = np.exp(-s) * (x - u)
    if not np.all(np.isfinite(z)):
        raise NumericalOverflowError("forward transform overflowed",
                                     max_abs=max_finite_abs(z))
    return z


class PrefixCache:
    """Per-layer K/V state of a frozen prefix.

    Once positions before ``n`` are final their keys and values at every
    layer never change, so a chunk of later positions can be pushed
    through the stack against the cache without touching the prefix
    again. The serial inverse extends the cache one position at a time;
    the module-wise sampler re-evaluates a whole module per sweep and
    extends by the module once it is done.
    """

    def __init__(self, block: FlowBlock, batch: int, t_len: int):
        c = block.channels
        self.block = block
        self.k = [np.empty((batch, t_len, c)) for _ in block.layers]
        self.v = [np.empty((batch, t_len, c)) for _ in block.layers]
        self.h_last: np.ndarray | None = None
        self.n = 0

    def _chunk_stack(self, x_chunk: np.ndarray, keep: bool) -> np.ndarray:
        """Stack output for chunk positions [n, n+m), attending to the
        cached prefix plus the chunk itself (causally). With ``keep`` the
        chunk's K/V are appended and the frozen length advances."""
        block = self.block
        n = self.n
        m = x_chunk.shape[1]
        h = x_chunk
        inv_sqrt_c = 1.0 / math.sqrt(block.channels)
        mask = _causal_mask(m)
        for li, layer in enumerate(block.layers):
            hn = _layer_norm(h, layer.ln1_gain, layer.ln1_bias)
            q = hn @ layer.wq
            k_new = hn @ layer.wk
            v_new = hn @ layer.wv
            scores_in = np.where(mask, q @ k_new.transpose(0, 2, 1) * inv_sqrt_c,
                                 -np.inf)
            if n:
                scores_pre = q @ self.k[li][:, :n, :].transpose(0, 2, 1) * inv_sqrt_c
                scores = np.concatenate([scores_pre, scores_in], axis=-1)
                values = np.concatenate([self.v[li][:, :n, :], v_new], axis=1)
            else:
                scores = scores_in
                values = v_new
            scores -= scores.max(axis=-1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=-1, keepdims=True)
            h = h + (w @ values) @ layer.wo
            hn2 = _layer_norm(h, layer.ln2_gain, layer.ln2_bias)
            h = h + _gelu(hn2 @ layer.mlp_w1) @ layer.mlp_w2
            if keep:
                self.k[li][:, n:n + m, :] = k_new
                self.v[li][:, n:n + m, :] = v_new
        h = _layer_norm(h, block.ln_f_gain, block.ln_f_bias)
        if keep:
            self.h_last = h[:, -1:, :]
            self.n = n + m
        return h

    def eval_chunk(self, x_chunk: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Log-scale and shift for chunk positions [n, n+m).

        Position n uses the last frozen position's stack output (zero when
        the cache is empty, realizing s_1 = u_1 = 0); later chunk positions
        shift within the chunk.
        """
        block = self.block
        h = self._chunk_stack(x_chunk, keep=False)
        ps = h @ block.w_s + block.b_s
        pu = h @ block.w_u + block.b_u
        s = np.empty_like(ps)
        u = np.empty_like(pu)
        s[:, 1:, :] = ps[:, :-1, :]
        u[:, 1:, :] = pu[:, :-1, :]
        if self.n == 0:
            s[:, 0, :] = 0.0
            u[:, 0, :] = 0.0
        else:
            s[:, 0, :] = (self.h_last @ block.w_s + block.b_s)[:, 0, :]
            u[:, 0, :] = (self.h_last @ block.w_u + block.b_u)[:, 0, :]
        return s, u

    def extend(self, x_chunk_final: np.ndarray) -> None:
        """Freeze a chunk: record its K/V and stack output from final values."""
        self._chunk_stack(x_chunk_final, keep=True)


def inverse_block_serial(block: FlowBlock, z) -> np.ndarray:
    """Exact inverse of :func:`forward_block`, one position at a time.

    Each of the T-1 sequential steps appends a single position's key/value
    state instead of re-running the whole prefix.
    """
    z = as_tensor3(z, channels=block.channels)
    b, t_len, _ = z.shape
    x = np.empty_like(z)
    x[:, 0, :] = z[:, 0, :]
    cache = PrefixCache(block, b, t_len)
    for t in range(1, t_len):
        cache.extend(x[:, t - 1:t, :])
        s_t = cache.h_last @ block.w_s + block.b_s
        u_t = cache.h_last @ block.w_u + block.b_u
        with np.errstate(over="ignore", invalid="ignore"):
            x[:, t, :] = (np.exp(s_t) * z[:, t:t + 1, :] + u_t)[:, 0, :]
        if not np.all(np.isfinite(x[:, t, :])):
            raise NumericalOverflowError(
                f"serial inverse overflowed at position {t}",
                iteration=t, max_abs=max_finite_abs(x[:, :t + 1, :]))
    return x


def forward_model(model: FlowModel, x) -> np.ndarray:
    """Compose block forwards, reversing the sequence where a block flips."""
    h = as_tensor3(x)
    for idx, block in enumerate(model.blocks):
        if block.flip:
            h = flip_seq(h)
        try:
            h = forward_block(block, h)
        except NumericalOverflowError as err:
            err.block = idx
            raise
    return h


def inverse_model_serial(model: FlowModel, z) -> np.ndarray:
    """Exact inverse of :func:`forward_model` (serial per block)."""
    h = as_tensor3(z)
    for idx in range(len(model.blocks) - 1, -1, -1):
        block = model.blocks[idx]
        try:
            h = inverse_block_serial(block, h)
        except NumericalOverflowError as err:
            err.block = idx
            raise
        if block.flip:
            h = flip_seq(h)
    return h


def default_weight_scale(depth: int) -> float:
    """Project-out scale that keeps toy forward passes well inside float64."""
    return 0.02 / math.sqrt(depth)


def gen_synthetic_model(seed: int, config: ModelConfig,
                        weight_scale=None) -> FlowModel:
    """Deterministic pseudo-random model; same seed gives identical bytes.

    ``weight_scale`` scales each block's project-out weights and may be a
    scalar or a per-block sequence; heterogeneous scales produce blocks of
    deliberately different iteration difficulty.
    """
    if weight_scale is None:
        weight_scale = default_weight_scale(config.depth)
    scales = np.broadcast_to(np.asarray(weight_scale, dtype=float),
                             (config.blocks,)).copy()
    if np.any(scales < 0):
        raise ValueError("weight_scale must be >= 0")
    rng = np.random.default_rng(seed)
    c, h, depth = config.channels, config.hidden, config.depth
    blocks = []
    for bi in range(config.blocks):
        layers = []
        for _ in range(depth):
            layers.append(AttentionLayer(
                wq=rng.standard_normal((c, c)) / math.sqrt(c),
                wk=rng.standard_normal((c, c)) / math.sqrt(c),
                wv=rng.standard_normal((c, c)) / math.sqrt(c),
                wo=rng.standard_normal((c, c)) * (0.5 / math.sqrt(c * depth)),
                mlp_w1=rng.standard_normal((c, h)) / math.sqrt(c),
                mlp_w2=rng.standard_normal((h, c)) * (0.5 / math.sqrt(h * depth)),
                ln1_gain=np.ones(c),
                ln1_bias=np.zeros(c),
                ln2_gain=np.ones(c),
                ln2_bias=np.zeros(c),
            ))
        scale = float(scales[bi])
        blocks.append(FlowBlock(
            layers=layers,
            ln_f_gain=np.ones(c),
            ln_f_bias=np.zeros(c),
            w_s=rng.standard_normal((c, c)) * (scale / math.sqrt(c)),
            b_s=rng.standard_normal(c) * (0.1 * scale),
            w_u=rng.standard_normal((c, c)) * (scale / math.sqrt(c)),
            b_u=rng.standard_normal(c) * (0.1 * scale),
            flip=bool(bi % 2),
        ))
    model = FlowModel(blocks=blocks, config=config)
    model.validate()
    return model
