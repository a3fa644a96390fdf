"""Learnable components: item embedding table, guidance encoder, denoiser.

The guidance encoder is a pre-norm transformer over a fixed-length,
left-padded history window. Attention uses a causal mask combined with a
padding mask; every position is additionally allowed to attend to itself so
the map stays total even for an all-padding window. Disallowed logits are
replaced by a -1e9 constant before the softmax, which underflows to an exact
zero weight, so the *values* stored at padded positions can never influence
the guidance vector (bit-for-bit).

The guidance vector is the final-layer output at the last non-padding
position (the last position when everything is padding). The denoiser is an
MLP over [noisy target, guidance, step embedding], where the step embedding
is a sinusoidal map of t passed through a learned projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ContractViolation
from .tensor import (Parameter, Tensor, add, concat, gather, gelu, layer_norm,
                     mask_fill, matmul, mul, reshape, softmax, swapaxes,
                     take_positions)

ATTN_MASK_FILL = -1e9


@dataclass
class ModelConfig:
    embedding_dim: int = 64
    window_length: int = 10
    encoder_blocks: int = 1
    encoder_heads: int = 2
    ffn_mult: int = 4
    denoiser_mult: int = 4

    def validate(self) -> None:
        if self.embedding_dim % 2 or self.embedding_dim % self.encoder_heads:
            raise ContractViolation(
                "embedding_dim must be even and divisible by encoder_heads")
        for name in ("embedding_dim", "window_length", "encoder_blocks",
                     "encoder_heads", "ffn_mult", "denoiser_mult"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")


class _Init:
    """Sequential initializer: all draws come from one seeded stream."""

    def __init__(self, seed: int, dtype):
        self.gen = rng.stream(seed, rng.INIT)
        self.dtype = dtype

    def normal(self, shape, std: float) -> np.ndarray:
        return (self.gen.standard_normal(shape) * std).astype(self.dtype)

    def glorot(self, fan_in: int, fan_out: int) -> np.ndarray:
        std = np.sqrt(2.0 / (fan_in + fan_out))
        return self.normal((fan_in, fan_out), std)

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=self.dtype)

    def ones(self, shape) -> np.ndarray:
        return np.ones(shape, dtype=self.dtype)


class ItemEmbeddingTable:
    """(num_items + 1) x dim rows; row 0 is the padding slot."""

    def __init__(self, num_items: int, dim: int, init: _Init, prefix: str = "item"):
        self.num_items = num_items
        self.dim = dim
        self.rows = Parameter(init.normal((num_items + 1, dim), 1.0), f"{prefix}.table")

    def lookup(self, ids: np.ndarray) -> Tensor:
        return gather(self.rows, np.asarray(ids, dtype=np.int64))

    def parameters(self) -> list[Parameter]:
        return [self.rows]


def embed_sequence(items, table: ItemEmbeddingTable) -> tuple[Tensor, np.ndarray]:
    """Stack window embeddings; mask marks positions holding the padding id."""
    ids = np.asarray(items, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() > table.num_items):
        raise ContractViolation(f"item id out of range [0, {table.num_items}]")
    return table.lookup(ids), ids == 0


class GuidanceEncoder:
    def __init__(self, cfg: ModelConfig, init: _Init, prefix: str = "enc"):
        cfg.validate()
        self.cfg = cfg
        d, L = cfg.embedding_dim, cfg.window_length
        self.pos = Parameter(init.normal((L, d), 0.02), f"{prefix}.pos")
        self.blocks = []
        for i in range(cfg.encoder_blocks):
            b = {
                "ln1_g": Parameter(init.ones(d), f"{prefix}.b{i}.ln1_g"),
                "ln1_b": Parameter(init.zeros(d), f"{prefix}.b{i}.ln1_b"),
                "wq": Parameter(init.glorot(d, d), f"{prefix}.b{i}.wq"),
                "bq": Parameter(init.zeros(d), f"{prefix}.b{i}.bq"),
                "wk": Parameter(init.glorot(d, d), f"{prefix}.b{i}.wk"),
                "bk": Parameter(init.zeros(d), f"{prefix}.b{i}.bk"),
                "wv": Parameter(init.glorot(d, d), f"{prefix}.b{i}.wv"),
                "bv": Parameter(init.zeros(d), f"{prefix}.b{i}.bv"),
                "wo": Parameter(init.glorot(d, d), f"{prefix}.b{i}.wo"),
                "bo": Parameter(init.zeros(d), f"{prefix}.b{i}.bo"),
                "ln2_g": Parameter(init.ones(d), f"{prefix}.b{i}.ln2_g"),
                "ln2_b": Parameter(init.zeros(d), f"{prefix}.b{i}.ln2_b"),
                "w1": Parameter(init.glorot(d, cfg.ffn_mult * d), f"{prefix}.b{i}.w1"),
                "b1": Parameter(init.zeros(cfg.ffn_mult * d), f"{prefix}.b{i}.b1"),
                "w2": Parameter(init.glorot(cfg.ffn_mult * d, d), f"{prefix}.b{i}.w2"),
                "b2": Parameter(init.zeros(d), f"{prefix}.b{i}.b2"),
            }
            self.blocks.append(b)
        self.lnf_g = Parameter(init.ones(d), f"{prefix}.lnf_g")
        self.lnf_b = Parameter(init.zeros(d), f"{prefix}.lnf_b")
        self.phi = Parameter(init.normal(d, 1.0), f"{prefix}.phi")

    def parameters(self) -> list[Parameter]:
        ps = [self.pos]
        for b in self.blocks:
            ps.extend(b.values())
        ps.extend([self.lnf_g, self.lnf_b, self.phi])
        return ps

    def _attention_keep(self, pad: np.ndarray) -> np.ndarray:
        """keep[b, i, j]: j <= i and j is real, or j == i (self fallback)."""
        B, L = pad.shape
        tril = np.tril(np.ones((L, L), dtype=bool))
        keep = tril[None, :, :] & ~pad[:, None, :]
        keep |= np.eye(L, dtype=bool)[None, :, :]
        return keep[:, None, :, :]

    def encode(self, emb_seq: Tensor, pad_mask: np.ndarray) -> Tensor:
        """Guidance vector(s) for one window (L, d) or a batch (B, L, d)."""
        single = emb_seq.data.ndim == 2
        x = reshape(emb_seq, (1,) + emb_seq.shape) if single else emb_seq
        pad = np.asarray(pad_mask, dtype=bool).reshape(x.shape[0], x.shape[1])
        cfg = self.cfg
        B, L, d = x.shape
        H, dh = cfg.encoder_heads, d // cfg.encoder_heads
        if L != cfg.window_length or d != cfg.embedding_dim:
            raise ContractViolation("window shape does not match encoder config")

        x = add(x, self.pos)
        keep = self._attention_keep(pad)
        for b in self.blocks:
            h = add(mul(layer_norm(x), b["ln1_g"]), b["ln1_b"])
            q = add(matmul(h, b["wq"]), b["bq"])
            k = add(matmul(h, b["wk"]), b["bk"])
            v = add(matmul(h, b["wv"]), b["bv"])
            q = swapaxes(reshape(q, (B, L, H, dh)), 1, 2)
            k = swapaxes(reshape(k, (B, L, H, dh)), 1, 2)
            v = swapaxes(reshape(v, (B, L, H, dh)), 1, 2)
            scores = mul(matmul(q, swapaxes(k, 2, 3)), 1.0 / np.sqrt(dh))
            attn = softmax(mask_fill(scores, keep, ATTN_MASK_FILL))
            ctx = reshape(swapaxes(matmul(attn, v), 1, 2), (B, L, d))
            x = add(x, add(matmul(ctx, b["wo"]), b["bo"]))
            h2 = add(mul(layer_norm(x), b["ln2_g"]), b["ln2_b"])
            ffn = add(matmul(gelu(add(matmul(h2, b["w1"]), b["b1"])), b["w2"]), b["b2"])
            x = add(x, ffn)

        any_real = (~pad).any(axis=1)
        rev_first = np.argmax(~pad[:, ::-1], axis=1)
        last_idx = np.where(any_real, L - 1 - rev_first, L - 1)
        c = take_positions(x, last_idx)
        c = add(mul(layer_norm(c), self.lnf_g), self.lnf_b)
        return reshape(c, (d,)) if single else c


def encode_history(encoder: GuidanceEncoder, emb_seq: Tensor, pad_mask) -> Tensor:
    return encoder.encode(emb_seq, pad_mask)


def dummy_guidance(encoder: GuidanceEncoder) -> Parameter:
    """The learned stand-in for "no guidance"."""
    return encoder.phi


def sinusoidal_steps(t, dim: int) -> np.ndarray:
    """Sin/cos features of the diffusion step (float64)."""
    if dim % 2:
        raise ContractViolation("step embedding dim must be even")
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class Denoiser:
    """MLP over [noisy target | guidance | step embedding]."""

    def __init__(self, cfg: ModelConfig, init: _Init, prefix: str = "den"):
        d, m = cfg.embedding_dim, cfg.denoiser_mult
        self.cfg = cfg
        self.step_w = Parameter(init.glorot(d, d), f"{prefix}.step_w")
        self.step_b = Parameter(init.zeros(d), f"{prefix}.step_b")
        self.w1 = Parameter(init.glorot(3 * d, m * d), f"{prefix}.w1")
        self.b1 = Parameter(init.zeros(m * d), f"{prefix}.b1")
        self.w2 = Parameter(init.glorot(m * d, m * d), f"{prefix}.w2")
        self.b2 = Parameter(init.zeros(m * d), f"{prefix}.b2")
        self.w3 = Parameter(init.glorot(m * d, d), f"{prefix}.w3")
        self.b3 = Parameter(init.zeros(d), f"{prefix}.b3")

    def parameters(self) -> list[Parameter]:
        return [self.step_w, self.step_b, self.w1, self.b1, self.w2, self.b2,
                self.w3, self.b3]

    def predict(self, xt, c, t) -> Tensor:
        """Clean-target prediction for noisy input(s) at step(s) t."""
        if not isinstance(xt, Tensor):
            xt = Tensor(np.asarray(xt, dtype=self.w1.data.dtype))
        if not isinstance(c, Tensor):
            c = Tensor(np.asarray(c, dtype=self.w1.data.dtype))
        single = xt.data.ndim == 1
        if single:
            xt = reshape(xt, (1,) + xt.shape)
        if c.data.ndim == 1:
            c = reshape(c, (1,) + c.shape)
        B, d = xt.shape
        t_arr = np.broadcast_to(np.asarray(t), (B,))
        se = Tensor(sinusoidal_steps(t_arr, d).astype(self.w1.data.dtype))
        se = add(matmul(se, self.step_w), self.step_b)
        h = concat([xt, c, se], axis=-1)
        h = gelu(add(matmul(h, self.w1), self.b1))
        h = gelu(add(matmul(h, self.w2), self.b2))
        out = add(matmul(h, self.w3), self.b3)
        return reshape(out, (d,)) if single else out


def denoise_predict(denoiser: Denoiser, xt, c, t) -> Tensor:
    return denoiser.predict(xt, c, t)


class GenerativeRecommender:
    """Bundles the table, encoder and denoiser behind one parameter list."""

    def __init__(self, num_items: int, cfg: ModelConfig, seed: int,
                 dtype=np.float32):
        cfg.validate()
        self.num_items = num_items
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        init = _Init(seed, self.dtype)
        self.items = ItemEmbeddingTable(num_items, cfg.embedding_dim, init)
        self.encoder = GuidanceEncoder(cfg, init)
        self.denoiser = Denoiser(cfg, init)

    def parameters(self) -> list[Parameter]:
        return (self.items.parameters() + self.encoder.parameters()
                + self.denoiser.parameters())

    def param_map(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def encode_histories(self, history_ids: np.ndarray) -> Tensor:
        emb, pad = embed_sequence(history_ids, self.items)
        return self.encoder.encode(emb, pad)

    def denoise(self, xt, c, t) -> Tensor:
        return self.denoiser.predict(xt, c, t)

    def phi_rows(self, batch: int) -> Tensor:
        """Dummy guidance broadcast to a batch (grad sums back into phi)."""
        ones = Tensor(np.ones((batch, 1), dtype=self.dtype))
        return mul(ones, self.encoder.phi)
