"""Transformer denoiser over the latent token grid (DiT style).

Conditioning: the sinusoidal step embedding plus the projected pooled
text vector feed a small MLP producing y; every block derives per-sample
scale/shift/gate triples from y through a zero-initialized linear
(AdaLN-Zero), so the freshly initialized network is exactly the zero map.
Word-level tokens optionally enter through cross-attention after
self-attention, with a zero-initialized output projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (LayerNorm, Linear, Mlp, Module, MultiheadAttention, Parameter,
                 sinusoidal_positions, timestep_embedding, trunc_normal)
from .seeding import rng_for
from .textenc import ConditionBundle


@dataclass
class DiTConfig:
    latent_tokens: int
    latent_dim: int
    width: int = 128
    heads: int = 4
    blocks: int = 12
    mlp_ratio: float = 4.0
    cross_attention: bool = False
    pooled_width: int = 128
    word_width: int = 128

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    b, w = scale.shape
    scale = ad.reshape(scale, (b, 1, w))
    shift = ad.reshape(shift, (b, 1, w))
    return ad.add(ad.add(x, ad.mul(x, scale)), shift)  # x * (1 + scale) + shift


def _gate(x: Tensor, gate: Tensor) -> Tensor:
    b, w = gate.shape
    return ad.mul(x, ad.reshape(gate, (b, 1, w)))


class DiTBlock(Module):
    def __init__(self, config: DiTConfig, rng, dtype):
        super().__init__()
        w = config.width
        self.norm1 = LayerNorm(w, dtype, affine=False)
        self.attn = MultiheadAttention(w, config.heads, rng, dtype)
        self.norm2 = LayerNorm(w, dtype, affine=False)
        self.mlp = Mlp(w, int(w * config.mlp_ratio), rng, dtype)
        self.adaln = Linear(w, 6 * w, rng, dtype, zero_init=True)
        self.cross = None
        if config.cross_attention:
            self.norm_cross = LayerNorm(w, dtype, affine=False)
            self.cross = MultiheadAttention(w, config.heads, rng, dtype,
                                            kv_width=config.word_width, zero_out=True)

    def __call__(self, x: Tensor, y: Tensor, words: Tensor | None = None,
                 word_mask: np.ndarray | None = None,
                 has_words: np.ndarray | None = None) -> Tensor:
        w = x.shape[-1]
        mod = self.adaln(y)
        shift1, scale1, gate1 = mod[:, :w], mod[:, w:2 * w], mod[:, 2 * w:3 * w]
        shift2, scale2, gate2 = mod[:, 3 * w:4 * w], mod[:, 4 * w:5 * w], mod[:, 5 * w:]
        h = self.attn(_modulate(self.norm1(x), shift1, scale1))
        x = ad.add(x, _gate(h, gate1))
        if self.cross is not None and words is not None:
            c = self.cross(self.norm_cross(x), context=words, mask=word_mask)
            if has_words is not None:
                c = ad.mul(c, has_words)  # rows with no word tokens contribute nothing
            x = ad.add(x, c)
        h = self.mlp(_modulate(self.norm2(x), shift2, scale2))
        return ad.add(x, _gate(h, gate2))


class Denoiser(Module):
    """eps-prediction network: (z_t, t, condition) -> eps_hat of shape (B, n, d)."""

    def __init__(self, config: DiTConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        self.config = config
        self.dtype = dtype
        rng = rng_for(seed, "dit-init")
        c = config
        self.in_proj = Linear(c.latent_dim, c.width, rng, dtype)
        self.null_embedding = Parameter(trunc_normal(rng, (c.pooled_width,), dtype=dtype))
        self.pooled_proj = Linear(c.pooled_width, c.width, rng, dtype)
        self.cond_fc1 = Linear(c.width, c.width, rng, dtype)
        self.cond_fc2 = Linear(c.width, c.width, rng, dtype)
        self.blocks = [DiTBlock(c, rng, dtype) for _ in range(c.blocks)]
        self.final_norm = LayerNorm(c.width, dtype, affine=False)
        self.final_adaln = Linear(c.width, 2 * c.width, rng, dtype, zero_init=True)
        self.final_proj = Linear(c.width, c.latent_dim, rng, dtype, zero_init=True)
        self._positions = sinusoidal_positions(c.latent_tokens, c.width, dtype=dtype)[None]

    # -- condition batching ------------------------------------------------------

    def _batch_conditions(self, bundles: list[ConditionBundle]):
        c = self.config
        b = len(bundles)
        pooled = np.zeros((b, c.pooled_width), dtype=self.dtype)
        null_rows = np.zeros((b, 1), dtype=self.dtype)
        for i, bundle in enumerate(bundles):
            if bundle.is_null:
                null_rows[i, 0] = 1.0
            else:
                if bundle.pooled.shape[0] != c.pooled_width:
                    raise ValueError(f"pooled width {bundle.pooled.shape[0]} != "
                                     f"model width {c.pooled_width}")
                pooled[i] = bundle.pooled
        pooled_t = ad.add(Tensor(pooled),
                          ad.matmul(Tensor(null_rows),
                                    ad.reshape(self.null_embedding, (1, c.pooled_width))))
        if not c.cross_attention:
            return pooled_t, None, None, None
        counts = [0 if bundle.is_null else bundle.word_tokens.shape[0] for bundle in bundles]
        max_n = max(max(counts), 1)
        words = np.zeros((b, max_n, c.word_width), dtype=self.dtype)
        mask = np.full((b, 1, 1, max_n), -1e9, dtype=self.dtype)
        has = np.zeros((b, 1, 1), dtype=self.dtype)
        for i, bundle in enumerate(bundles):
            n = counts[i]
            if n:
                if bundle.word_tokens.shape[1] != c.word_width:
                    raise ValueError(f"word width {bundle.word_tokens.shape[1]} != "
                                     f"model width {c.word_width}")
                words[i, :n] = bundle.word_tokens
                mask[i, :, :, :n] = 0.0
                has[i] = 1.0
            else:
                mask[i, :, :, 0] = 0.0  # keep softmax finite; output is zeroed via `has`
        return pooled_t, Tensor(words), mask, has

    def condition_vector(self, t: np.ndarray, bundles: list[ConditionBundle]):
        pooled_t, words, mask, has = self._batch_conditions(bundles)
        temb = timestep_embedding(np.asarray(t), self.config.width, dtype=self.dtype)
        y = ad.add(self.pooled_proj(pooled_t), Tensor(temb))
        y = self.cond_fc2(ad.gelu(self.cond_fc1(y)))
        return y, words, mask, has

    # -- forward ------------------------------------------------------------------

    def denoise(self, z_t, t, bundles: list[ConditionBundle]) -> Tensor:
        c = self.config
        z_t = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=self.dtype))
        if z_t.shape[-2:] != (c.latent_tokens, c.latent_dim):
            raise ValueError(f"latent shape {z_t.shape[-2:]} != "
                             f"({c.latent_tokens}, {c.latent_dim})")
        t = np.atleast_1d(np.asarray(t))
        if len(bundles) != z_t.shape[0] or t.shape[0] != z_t.shape[0]:
            raise ValueError("batch size mismatch between z_t, t, and conditions")
        y, words, mask, has = self.condition_vector(t, bundles)
        x = ad.add(self.in_proj(z_t), Tensor(self._positions))
        for block in self.blocks:
            x = block(x, y, words, mask, has)
        w = c.width
        mod = self.final_adaln(y)
        x = _modulate(self.final_norm(x), mod[:, :w], mod[:, w:])
        return self.final_proj(x)
