"""Hypernetworks that emit per-(task, layer, position) adapter parameters.

One hypernetwork per modality, shared across every task, layer, and position
of that modality's encoder. It conditions on three learned embedding tables
(task, layer id, adapter position), mixes them through one tanh hidden layer,
and emits every block of a residual bottleneck adapter through per-block
linear heads. Up-projection heads start at zero so adapters begin as exact
identities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor
from .encoders import POSITIONS_PER_LAYER, EncoderSpec, encoder_param_count

COND_DIM = 16  # per condition signal; three signals are concatenated


class HypernetError(ValueError):
    """Unregistered condition ids or infeasible budget targets."""


@dataclass
class AdapterParams:
    """One adapter's weights: residual bottleneck with its own layer norm."""

    down_weight: Tensor  # (h, b)
    down_bias: Tensor  # (b,)
    up_weight: Tensor  # (b, h)
    up_bias: Tensor  # (h,)
    ln_gain: Tensor  # (h,)
    ln_bias: Tensor  # (h,)

    def __post_init__(self) -> None:
        h, b = self.down_weight.shape
        if b >= h:
            raise HypernetError(f"bottleneck {b} must be smaller than hidden dim {h}")

    def apply(self, x: Tensor) -> Tensor:
        """x + up(tanh(down(layernorm(x)))) on a (n, h) activation batch."""
        normed = ad.layer_norm(x, self.ln_gain, self.ln_bias)
        squeezed = ad.tanh(ad.matmul(normed, self.down_weight) + self.down_bias)
        return x + ad.matmul(squeezed, self.up_weight) + self.up_bias


# Adapter blocks emitted per site: name -> shape builder given (h, b)
_BLOCK_SHAPES = (
    ("down_weight", lambda h, b: (h, b)),
    ("down_bias", lambda h, b: (b,)),
    ("up_weight", lambda h, b: (b, h)),
    ("up_bias", lambda h, b: (h,)),
    ("ln_gain", lambda h, b: (h,)),
    ("ln_bias", lambda h, b: (h,)),
)


@dataclass(frozen=True)
class HyperNetworkConfig:
    num_tasks: int
    num_layers: int
    hidden_dim: int  # encoder hidden size the adapters act on
    bottleneck: int
    width: int  # hypernetwork hidden layer width
    seed: int
    num_positions: int = POSITIONS_PER_LAYER
    cond_dim: int = COND_DIM

    def __post_init__(self) -> None:
        if self.bottleneck >= self.hidden_dim:
            raise HypernetError("bottleneck must be below the encoder hidden dim")
        if min(self.num_tasks, self.num_layers, self.width, self.bottleneck) < 1:
            raise HypernetError("all hypernetwork dimensions must be positive")


class HyperNetwork:
    """Shared adapter generator for one modality."""

    def __init__(self, cfg: HyperNetworkConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c, w = 3 * cfg.cond_dim, cfg.width
        h, b = cfg.hidden_dim, cfg.bottleneck
        params: dict[str, Array] = {
            "task_embed": rng.normal(0.0, 0.02, size=(cfg.num_tasks, cfg.cond_dim)),
            "layer_embed": rng.normal(0.0, 0.02, size=(cfg.num_layers, cfg.cond_dim)),
            "pos_embed": rng.normal(0.0, 0.02, size=(cfg.num_positions, cfg.cond_dim)),
            "body.w": rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, w)),
            "body.b": np.zeros(w),
        }
        for name, shape_fn in _BLOCK_SHAPES:
            size = int(np.prod(shape_fn(h, b)))
            if name.startswith("up_"):
                # zero heads: generated adapters start as the identity map
                params[f"head.{name}.w"] = np.zeros((w, size))
                params[f"head.{name}.b"] = np.zeros(size)
            elif name == "ln_gain":
                params[f"head.{name}.w"] = np.zeros((w, size))
                params[f"head.{name}.b"] = np.ones(size)
            elif name == "ln_bias":
                params[f"head.{name}.w"] = np.zeros((w, size))
                params[f"head.{name}.b"] = np.zeros(size)
            else:
                params[f"head.{name}.w"] = rng.normal(0.0, 1.0 / np.sqrt(w), size=(w, size))
                params[f"head.{name}.b"] = np.zeros(size)
        self.params = params

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())


def generate_adapters(
    hn: HyperNetwork,
    task_id: int,
    layer_id: int,
    position_id: int,
    params: Mapping[str, Tensor] | None = None,
) -> AdapterParams:
    """Emit one adapter's parameters for a (task, layer, position) site.

    Deterministic in the hypernetwork weights and the three condition
    embeddings; pass tensor leaves via `params` to obtain gradients.
    """
    cfg = hn.cfg
    if not 0 <= task_id < cfg.num_tasks:
        raise HypernetError(f"task id {task_id} is not registered (have {cfg.num_tasks})")
    if not 0 <= layer_id < cfg.num_layers:
        raise HypernetError(f"layer id {layer_id} out of range")
    if not 0 <= position_id < cfg.num_positions:
        raise HypernetError(f"position id {position_id} out of range")
    if params is None:
        params = {name: Tensor(arr) for name, arr in hn.params.items()}

    cond = ad.concat(
        [
            ad.take_row(params["task_embed"], task_id),
            ad.take_row(params["layer_embed"], layer_id),
            ad.take_row(params["pos_embed"], position_id),
        ]
    ).reshape((1, 3 * cfg.cond_dim))
    hidden = ad.tanh(ad.matmul(cond, params["body.w"]) + params["body.b"])

    h, b = cfg.hidden_dim, cfg.bottleneck
    fields = {}
    for name, shape_fn in _BLOCK_SHAPES:
        flat = ad.matmul(hidden, params[f"head.{name}.w"]) + params[f"head.{name}.b"]
        fields[name] = flat.reshape(shape_fn(h, b))
    return AdapterParams(**fields)


# -- projections into the shared contrastive space ---------------------------


def init_projection(in_dim: int, out_dim: int, seed: int, identity: bool = False) -> dict[str, Array]:
    if identity:
        if in_dim != out_dim:
            raise HypernetError("identity projection needs matching dims")
        return {"w": np.eye(in_dim), "b": np.zeros(out_dim)}
    rng = np.random.default_rng(seed)
    return {"w": rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, out_dim)), "b": np.zeros(out_dim)}


def project(vectors: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if vectors.shape[1] != weight.shape[0]:
        raise HypernetError(
            f"projection expects input dim {weight.shape[0]}, got {vectors.shape[1]}"
        )
    return ad.matmul(vectors, weight) + bias


def projection_param_count(text_out: int, vision_out: int, shared_dim: int) -> int:
    return text_out * shared_dim + shared_dim + vision_out * shared_dim + shared_dim


# -- parameter budget ---------------------------------------------------------


@dataclass(frozen=True)
class BudgetReport:
    trainable_param_count: int
    frozen_param_count: int

    @property
    def fraction(self) -> float:
        return self.trainable_param_count / (self.trainable_param_count + self.frozen_param_count)


@dataclass(frozen=True)
class BudgetChoice:
    """Output of configure_budget: adapter/hypernet sizing plus its report."""

    bottleneck: int
    width: int
    shared_dim: int
    report: BudgetReport


def hypernet_param_count(
    num_tasks: int,
    num_layers: int,
    hidden_dim: int,
    bottleneck: int,
    width: int,
    num_positions: int = POSITIONS_PER_LAYER,
    cond_dim: int = COND_DIM,
) -> int:
    """Closed-form size of one modality's hypernetwork."""
    tables = cond_dim * (num_tasks + num_layers + num_positions)
    body = 3 * cond_dim * width + width
    head_out = 2 * hidden_dim * bottleneck + bottleneck + 3 * hidden_dim
    heads = width * head_out + head_out
    return tables + body + heads


def trainable_param_count(
    text_spec: EncoderSpec,
    vision_spec: EncoderSpec,
    num_tasks: int,
    bottleneck: int,
    width: int,
    shared_dim: int,
) -> int:
    return (
        hypernet_param_count(num_tasks, text_spec.num_layers, text_spec.hidden_dim, bottleneck, width)
        + hypernet_param_count(num_tasks, vision_spec.num_layers, vision_spec.hidden_dim, bottleneck, width)
        + projection_param_count(text_spec.output_dim, vision_spec.output_dim, shared_dim)
    )


SHARED_DIM_DEFAULT = 64
_SHARED_DIM_CANDIDATES = (64, 48, 32, 24, 16, 12, 8)


def configure_budget(
    text_spec: EncoderSpec,
    vision_spec: EncoderSpec,
    num_tasks: int,
    target_fraction: float = 0.10,
    max_width: int = 256,
) -> BudgetChoice:
    """Largest (bottleneck, width) whose trainable fraction stays within target.

    Prefers the largest shared projection dim that still admits a feasible
    configuration. "Largest pair" is read lexicographically: maximize the
    smaller of (bottleneck, width) first, then spend remaining budget on
    parameter count; this avoids degenerate one-unit generators.
    """
    if not 0.0 < target_fraction < 1.0:
        raise HypernetError("target_fraction must be in (0, 1)")
    frozen = encoder_param_count(text_spec) + encoder_param_count(vision_spec)
    max_b = min(text_spec.hidden_dim, vision_spec.hidden_dim) - 1
    # fraction <= target  <=>  trainable <= frozen * target / (1 - target)
    cap = frozen * target_fraction / (1.0 - target_fraction)

    for shared_dim in _SHARED_DIM_CANDIDATES:
        if shared_dim > SHARED_DIM_DEFAULT:
            continue
        best: tuple[tuple[int, int, int, int], int, int] | None = None  # (key, b, w)
        for b in range(1, max_b + 1):
            # for a fixed bottleneck, count grows with width, so only the
            # widest feasible width can win
            w_best = 0
            count_best = 0
            for w in range(1, max_width + 1):
                count = trainable_param_count(text_spec, vision_spec, num_tasks, b, w, shared_dim)
                if count > cap:
                    break
                w_best, count_best = w, count
            if w_best == 0:
                continue
            key = (min(b, w_best), count_best, b, w_best)
            if best is None or key > best[0]:
                best = (key, b, w_best)
        if best is not None:
            (_, count, _, _), b, w = best
            return BudgetChoice(
                bottleneck=b,
                width=w,
                shared_dim=shared_dim,
                report=BudgetReport(trainable_param_count=count, frozen_param_count=frozen),
            )
    raise HypernetError(
        f"no feasible configuration: target {target_fraction} is below one minimal adapter set"
    )
