"""Frozen text and vision encoder stacks with per-layer adapter sites.

Encoders are deterministic residual MLP stacks behind a uniform interface:
token sequences are embedding-looked-up and mean pooled, image grids are
flattened and linearly projected, and both then pass through
linear -> layer-norm -> tanh residual blocks. Each block exposes two adapter
insertion sites, addressed by (layer_id, position).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor

TEXT = "text"
IMAGE = "image"
MULTIMODAL = "multimodal"

GRID_SHAPE = (8, 8, 3)
GRID_SIZE = int(np.prod(GRID_SHAPE))

POSITIONS_PER_LAYER = 2


class EncoderError(ValueError):
    """Bad encoder configuration or input."""


@dataclass(frozen=True)
class EncoderSpec:
    modality: str
    hidden_dim: int
    num_layers: int
    output_dim: int
    weight_seed: int
    size_class: str = "base"
    vocab_size: int | None = None  # text only
    input_dim: int | None = None  # image only (flattened grid length)

    def __post_init__(self) -> None:
        if self.modality not in (TEXT, IMAGE):
            raise EncoderError(f"unknown modality {self.modality!r}")
        if min(self.hidden_dim, self.num_layers, self.output_dim) <= 0:
            raise EncoderError("dimensions must be positive")
        if self.modality == TEXT and (self.vocab_size is None or self.vocab_size <= 0):
            raise EncoderError("text encoder needs a positive vocab_size")
        if self.modality == IMAGE and (self.input_dim is None or self.input_dim <= 0):
            raise EncoderError("image encoder needs a positive input_dim")


def text_spec(size_class: str = "base", weight_seed: int = 101, vocab_size: int = 1024) -> EncoderSpec:
    if size_class == "base":
        return EncoderSpec(TEXT, 64, 4, 64, weight_seed, "base", vocab_size=vocab_size)
    if size_class == "small":
        # ~43% of the base text parameter count
        return EncoderSpec(TEXT, 32, 2, 64, weight_seed, "small", vocab_size=vocab_size)
    raise EncoderError(f"unknown size_class {size_class!r}")


def vision_spec(size_class: str = "base", weight_seed: int = 202) -> EncoderSpec:
    if size_class == "base":
        return EncoderSpec(IMAGE, 96, 4, 96, weight_seed, "base", input_dim=GRID_SIZE)
    if size_class == "small":
        # ~22% of the base vision parameter count
        return EncoderSpec(IMAGE, 40, 2, 96, weight_seed, "small", input_dim=GRID_SIZE)
    raise EncoderError(f"unknown size_class {size_class!r}")


@dataclass
class Embedding:
    """A batch of embedding vectors, one per example, shape (n, d)."""

    vectors: Tensor
    modality: str
    task_id: int | None = None

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def weight_digest(weights: Mapping[str, Array]) -> str:
    """256-bit content hash over names, shapes, and raw weight bytes."""
    h = hashlib.sha256()
    for name in sorted(weights):
        arr = np.ascontiguousarray(weights[name])
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def param_count(weights: Mapping[str, Array]) -> int:
    return sum(int(w.size) for w in weights.values())


class Encoder:
    """A frozen encoder instance: spec, named weights, and their digest."""

    def __init__(self, spec: EncoderSpec, weights: dict[str, Array]):
        self.spec = spec
        self.weights = weights
        self.content_digest = weight_digest(weights)

    @property
    def adapter_sites(self) -> list[tuple[int, int]]:
        return [(layer, pos) for layer in range(self.spec.num_layers) for pos in range(POSITIONS_PER_LAYER)]

    def param_count(self) -> int:
        return param_count(self.weights)

    def refresh_digest(self) -> str:
        self.content_digest = weight_digest(self.weights)
        return self.content_digest


def build_encoder(spec: EncoderSpec) -> Encoder:
    """Seeded deterministic construction; identical specs give identical weights."""
    rng = np.random.default_rng(spec.weight_seed)
    h = spec.hidden_dim
    weights: dict[str, Array] = {}
    if spec.modality == TEXT:
        weights["tok_embed"] = rng.normal(0.0, 1.0, size=(spec.vocab_size, h))
    else:
        weights["in_proj_w"] = rng.normal(0.0, 1.0 / np.sqrt(spec.input_dim), size=(spec.input_dim, h))
        weights["in_proj_b"] = np.zeros(h)
    for layer in range(spec.num_layers):
        weights[f"blocks.{layer}.w"] = rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, h))
        weights[f"blocks.{layer}.b"] = np.zeros(h)
        weights[f"blocks.{layer}.ln_g"] = np.ones(h)
        weights[f"blocks.{layer}.ln_b"] = np.zeros(h)
    weights["out_w"] = rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, spec.output_dim))
    weights["out_b"] = np.zeros(spec.output_dim)
    return Encoder(spec, weights)


def encoder_param_count(spec: EncoderSpec) -> int:
    """Closed-form parameter count; must agree with the built weight map."""
    h = spec.hidden_dim
    if spec.modality == TEXT:
        total = spec.vocab_size * h
    else:
        total = spec.input_dim * h + h
    total += spec.num_layers * (h * h + 3 * h)
    total += h * spec.output_dim + spec.output_dim
    return total


def pool_tokens(spec: EncoderSpec, token_batch: Sequence[Sequence[int]]) -> Array:
    """Bag-of-tokens pooling matrix P, so pooled = P @ tok_embed, shape (n, vocab)."""
    n = len(token_batch)
    pool = np.zeros((n, spec.vocab_size))
    for i, tokens in enumerate(token_batch):
        if len(tokens) == 0:
            raise EncoderError("empty token sequence")
        for t in tokens:
            if not 0 <= t < spec.vocab_size:
                raise EncoderError(f"token id {t} outside vocab of {spec.vocab_size}")
            pool[i, t] += 1.0
        pool[i] /= len(tokens)
    return pool


def flatten_grids(spec: EncoderSpec, grids) -> Array:
    arr = np.asarray(grids, dtype=np.float64)
    if arr.ndim == len(GRID_SHAPE):
        arr = arr[None]
    flat = arr.reshape(arr.shape[0], -1)
    if flat.shape[1] != spec.input_dim:
        raise EncoderError(f"image input has {flat.shape[1]} values, expected {spec.input_dim}")
    return flat


def encode(
    encoder: Encoder,
    inputs,
    adapters: Mapping[tuple[int, int], "object"] | None = None,
    weights: Mapping[str, Tensor] | None = None,
    pooled: Array | None = None,
) -> Embedding:
    """Forward pass; a pure function of (weights, adapters, input).

    `weights` may supply tensor leaves (used when encoder weights themselves
    are trained); otherwise the frozen arrays are wrapped as constants.
    `pooled` short-circuits the input stage with a precomputed (n, hidden) or
    (n, input_dim) matrix so repeated passes over fixed data skip re-pooling.
    """
    spec = encoder.spec
    if weights is None:
        weights = {name: Tensor(arr) for name, arr in encoder.weights.items()}
    if adapters is not None:
        expected = set(encoder.adapter_sites)
        if set(adapters.keys()) != expected:
            raise EncoderError(
                f"adapter sites {sorted(adapters.keys())} do not cover the {len(expected)} insertion sites"
            )

    if pooled is not None:
        if spec.modality == TEXT:
            x = ad.matmul(Tensor(pooled), weights["tok_embed"])
        else:
            x = ad.matmul(Tensor(pooled), weights["in_proj_w"]) + weights["in_proj_b"]
    elif spec.modality == TEXT:
        x = ad.matmul(Tensor(pool_tokens(spec, inputs)), weights["tok_embed"])
    else:
        flat = flatten_grids(spec, inputs)
        x = ad.matmul(Tensor(flat), weights["in_proj_w"]) + weights["in_proj_b"]

    for layer in range(spec.num_layers):
        u = ad.matmul(x, weights[f"blocks.{layer}.w"]) + weights[f"blocks.{layer}.b"]
        if adapters is not None:
            u = adapters[(layer, 0)].apply(u)
        y = x + ad.tanh(
            ad.layer_norm(u, weights[f"blocks.{layer}.ln_g"], weights[f"blocks.{layer}.ln_b"])
        )
        if adapters is not None:
            y = adapters[(layer, 1)].apply(y)
        x = y

    out = ad.matmul(x, weights["out_w"]) + weights["out_b"]
    return Embedding(vectors=out, modality=spec.modality)


def fuse_multimodal(text_emb: Embedding, image_emb: Embedding) -> Embedding:
    """Concatenate one text and one image embedding batch, text first."""
    if text_emb.modality == image_emb.modality:
        raise EncoderError(f"cannot fuse two {text_emb.modality} embeddings")
    if text_emb.modality != TEXT or image_emb.modality != IMAGE:
        raise EncoderError("fusion order is (text, image)")
    fused = ad.concat([text_emb.vectors, image_emb.vectors], axis=1)
    return Embedding(vectors=fused, modality=MULTIMODAL, task_id=text_emb.task_id)
