"""Layers and parameter management built on the autodiff engine.

Initialization follows DiT conventions: truncated normal (std 0.02,
clipped at 2 sigma) for weights, zeros for biases; residual gates and
final projections that must start as the identity/zero map are
zero-initialized explicitly by their owners.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Parameter(Tensor):
    """A named, trainable tensor. Names are unique within a model."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.asarray(data))
        self.requires_grad = True
        self.name = name


class Module:
    """Minimal module tree: attribute assignment registers parameters
    and submodules; ``named_parameters`` yields dotted unique names."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._modules[f"{key}.{i}"] = v
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for k, p in self._params.items():
            name = f"{prefix}{k}"
            if name in out:
                raise ValueError(f"duplicate parameter name: {name}")
            p.name = name
            out[name] = p
        for k, m in self._modules.items():
            sub = m.named_parameters(prefix=f"{prefix}{k}.")
            dup = out.keys() & sub.keys()
            if dup:
                raise ValueError(f"duplicate parameter names: {sorted(dup)}")
            out.update(sub)
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters().items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = params.keys() - state.keys()
        extra = state.keys() - params.keys()
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal draws resampled until within 2 std (DiT-style init)."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.standard_normal(bad.sum()) * std
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


class Linear(Module):
    """y = x W + b over the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32,
                 zero_init: bool = False, bias: bool = True):
        super().__init__()
        if d_in < 1 or d_out < 1:
            raise ValueError(f"Linear: bad dims ({d_in}, {d_out})")
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = trunc_normal(rng, (d_in, d_out), dtype=dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ValueError(f"Linear: input width {x.shape[-1]} != {self.weight.shape[0]}")
        return ad.affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5, affine: bool = True):
        super().__init__()
        if d < 1:
            raise ValueError("LayerNorm: d must be >= 1")
        self.eps = eps
        self.affine = affine
        if affine:
            self.gamma = Parameter(np.ones(d, dtype=dtype))
            self.beta = Parameter(np.zeros(d, dtype=dtype))
        else:
            # fixed unit affine (AdaLN supplies modulation externally)
            self.gamma = Tensor(np.ones(d, dtype=dtype))
            self.beta = Tensor(np.zeros(d, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class MultiheadAttention(Module):
    """Self- or cross-attention over (B, T, D) with H heads."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, dtype=np.float32,
                 kv_width: int | None = None, zero_out: bool = False):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = width // heads
        kv_width = kv_width or width
        self.wq = Linear(width, width, rng, dtype)
        self.wk = Linear(kv_width, width, rng, dtype)
        self.wv = Linear(kv_width, width, rng, dtype)
        self.wo = Linear(width, width, rng, dtype, zero_init=zero_out)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return ad.transpose(ad.reshape(x, (b, t, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, context: Tensor | None = None, mask: np.ndarray | None = None) -> Tensor:
        src = x if context is None else context
        q = self._split(self.wq(x))
        k = self._split(self.wk(src))
        v = self._split(self.wv(src))
        o = ad.attention(q, k, v, mask=mask)
        b, _, t, _ = o.shape
        o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (b, t, self.heads * self.head_dim))
        return self.wo(o)


class Mlp(Module):
    def __init__(self, width: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(width, hidden, rng, dtype)
        self.fc2 = Linear(hidden, width, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-LN block: x + Attn(LN(x)); x + MLP(LN(x))."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, dtype=np.float32,
                 mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = LayerNorm(width, dtype)
        self.attn = MultiheadAttention(width, heads, rng, dtype)
        self.norm2 = LayerNorm(width, dtype)
        self.mlp = Mlp(width, int(width * mlp_ratio), rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.add(x, self.attn(self.norm1(x)))
        return ad.add(x, self.mlp(self.norm2(x)))


def sinusoidal_positions(length: int, width: int, dtype=np.float32) -> np.ndarray:
    """Fixed (length, width) sin/cos position table."""
    pos = np.arange(length)[:, None].astype(np.float64)
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = pos * freqs[None, :]
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(ang)[:, : (width + 1) // 2]
    table[:, 1::2] = np.cos(ang)[:, : width // 2]
    return table.astype(dtype)


def timestep_embedding(t: np.ndarray, width: int, max_period: float = 10000.0, dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of (possibly fractional) diffusion steps t: (B,) -> (B, width)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(ang), np.sin(ang)], axis=-1)
    if width % 2:
        emb = np.concatenate([emb, np.zeros((t.shape[0], 1))], axis=-1)
    return emb.astype(dtype)
