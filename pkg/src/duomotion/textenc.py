"""Text conditioning.

The denoiser only sees a ConditionBundle: a pooled sentence vector plus
word-level token vectors (and a null flag handled by the model's learned
null embedding). Bundles come either from the deterministic toy embedder
below or from files of externally precomputed embeddings (e.g. real
CLIP/T5 dumps written by an outside script), both behind the same
``embed(text)`` contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .seeding import fnv1a64, rng_for

TOY_POOLED_WIDTH = 128
TOY_WORD_WIDTH = 128
_TOY_GLOBAL_SEED = 0x70F0  # fixed; changing it invalidates every trained checkpoint


class TextError(ValueError):
    pass


class MissingCaptionError(KeyError):
    def __init__(self, caption: str):
        super().__init__(f"caption not present in embedding file: {caption!r}")
        self.caption = caption


@dataclass
class ConditionBundle:
    """Paper-facing condition c: pooled sentence embedding + word tokens."""

    pooled: np.ndarray                 # (e_s,)
    word_tokens: np.ndarray            # (N, e_w); may be empty
    is_null: bool = False

    def __post_init__(self):
        self.pooled = np.asarray(self.pooled, dtype=np.float32)
        self.word_tokens = np.asarray(self.word_tokens, dtype=np.float32)
        if self.word_tokens.ndim != 2:
            self.word_tokens = self.word_tokens.reshape(-1, self.word_tokens.shape[-1] if self.word_tokens.size else 0)
        if not np.isfinite(self.pooled).all():
            raise TextError("non-finite pooled embedding")


def null_bundle(pooled_width: int = TOY_POOLED_WIDTH, word_width: int = TOY_WORD_WIDTH) -> ConditionBundle:
    """The unconditional bundle; the denoiser swaps in its learned null vector."""
    return ConditionBundle(np.zeros(pooled_width, dtype=np.float32),
                           np.zeros((0, word_width), dtype=np.float32), is_null=True)


def _tokenize(text: str) -> list[str]:
    tokens = [tok.strip(".,!?;:'\"()") for tok in text.lower().split()]
    return [t for t in tokens if t]


class ToyTextEmbedder:
    """Deterministic hash-based embedder standing in for frozen encoders.

    Every token maps to a fixed Gaussian row seeded by the 64-bit FNV-1a
    hash of its bytes; the pooled vector is the token mean through a fixed
    seeded projection, so it is invariant to word order.
    """

    pooled_width = TOY_POOLED_WIDTH
    word_width = TOY_WORD_WIDTH

    def __init__(self):
        self._rows: dict[str, np.ndarray] = {}
        proj_rng = rng_for(_TOY_GLOBAL_SEED, "pooled-projection")
        self._proj = (proj_rng.standard_normal((self.word_width, self.pooled_width))
                      / np.sqrt(self.word_width)).astype(np.float32)

    def _token_row(self, token: str) -> np.ndarray:
        row = self._rows.get(token)
        if row is None:
            seed = fnv1a64(token.encode("utf-8")) ^ _TOY_GLOBAL_SEED
            rng = np.random.default_rng(np.random.SeedSequence(seed))
            row = (rng.standard_normal(self.word_width) / np.sqrt(self.word_width)).astype(np.float32)
            self._rows[token] = row
        return row

    def embed(self, text: str) -> ConditionBundle:
        tokens = _tokenize(text)
        if not tokens:
            raise TextError(f"cannot embed empty text: {text!r}")
        rows = np.stack([self._token_row(t) for t in tokens])
        pooled = rows.mean(axis=0) @ self._proj
        return ConditionBundle(pooled, rows)


# -- precomputed embedding files -------------------------------------------------


@dataclass
class EmbeddingFile:
    """Caption -> (pooled, word_tokens) mapping loaded from the shared
    chunked-binary container."""

    pooled_width: int
    word_width: int
    _table: dict = field(default_factory=dict)

    def lookup(self, caption: str) -> ConditionBundle:
        if caption not in self._table:
            raise MissingCaptionError(caption)
        pooled, words = self._table[caption]
        return ConditionBundle(pooled, words)

    @property
    def captions(self) -> list[str]:
        return list(self._table)

    def validate_widths(self, pooled_width: int, word_width: int):
        """Fail fast at load/configure time, not at sample time."""
        if (self.pooled_width, self.word_width) != (pooled_width, word_width):
            raise TextError(
                f"embedding widths (e_s={self.pooled_width}, e_w={self.word_width}) do not "
                f"match the model (e_s={pooled_width}, e_w={word_width})")

    def embed(self, text: str) -> ConditionBundle:
        return self.lookup(text)


def save_embeddings(path: str, entries: dict[str, tuple[np.ndarray, np.ndarray]]):
    captions = list(entries)
    widths = None
    tensors = {}
    for i, caption in enumerate(captions):
        pooled, words = entries[caption]
        pooled = np.asarray(pooled, dtype=np.float32)
        words = np.asarray(words, dtype=np.float32)
        if widths is None:
            widths = (pooled.shape[0], words.shape[1] if words.size else pooled.shape[0])
        if pooled.shape[0] != widths[0] or (words.size and words.shape[1] != widths[1]):
            raise TextError(f"inconsistent embedding widths at caption {caption!r}")
        tensors[f"{i}.pooled"] = pooled
        tensors[f"{i}.words"] = words
    config = {"kind": "embeddings", "captions": captions,
              "pooled_width": widths[0], "word_width": widths[1]}
    save_checkpoint(path, config, tensors)


def load_embeddings(path: str) -> EmbeddingFile:
    config, tensors = load_checkpoint(path)
    if config.get("kind") != "embeddings":
        raise TextError(f"{path} is not an embedding file (kind={config.get('kind')!r})")
    table = {}
    for i, caption in enumerate(config["captions"]):
        table[caption] = (tensors[f"{i}.pooled"].astype(np.float32),
                          tensors[f"{i}.words"].astype(np.float32))
    return EmbeddingFile(config["pooled_width"], config["word_width"], table)
