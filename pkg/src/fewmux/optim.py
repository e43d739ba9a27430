"""AdamW with decoupled weight decay, global-norm clipping, and the LR schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Array, NumericsError


@dataclass
class LrSchedule:
    """Linear warmup to a peak, a constant plateau, then per-step exponential decay."""

    peak_lr: float = 1e-3
    warmup_steps: int = 5000
    constant_until_frac: float = 0.8
    decay_rate: float = 0.99995
    total_steps: int = 500_000

    def __post_init__(self) -> None:
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.constant_until_frac <= 1.0:
            raise ValueError("constant_until_frac must be in (0, 1]")
        if not 0.0 < self.decay_rate < 1.0:
            raise ValueError("decay_rate must be in (0, 1)")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")
        if self.warmup_steps > self.constant_end:
            raise ValueError("warmup must end before the decay phase starts")

    @property
    def constant_end(self) -> int:
        return int(self.constant_until_frac * self.total_steps)


def lr_at_step(sched: LrSchedule, step: int) -> float:
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    if step < sched.warmup_steps:
        return sched.peak_lr * step / sched.warmup_steps
    if step <= sched.constant_end:
        return sched.peak_lr
    return sched.peak_lr * sched.decay_rate ** (step - sched.constant_end)


def global_norm(grads: Sequence[Array]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))


def clip_global_norm(grads: Sequence[Array], max_norm: float = 1.0) -> tuple[list[Array], float]:
    """Scale all gradients by max_norm/norm when the joint L2 norm exceeds it.

    Returns the (possibly rescaled) gradients and the pre-clip joint norm.
    The scale denominator carries a small epsilon so the rescaled norm lands
    strictly below max_norm, which makes a second application a no-op.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class AdamWState:
    """Per-parameter moment accumulators plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: dict[str, float] = field(default_factory=dict)
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def init(
        cls,
        params: Mapping[str, Array],
        weight_decay: Mapping[str, float] | float = 0.1,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamWState":
        if isinstance(weight_decay, (int, float)):
            wd = {name: float(weight_decay) for name in params}
        else:
            wd = {name: float(weight_decay[name]) for name in params}
        return cls(
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            weight_decay=wd,
            step=0,
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adamw_step(
    params: Mapping[str, Array],
    grads: Mapping[str, Array],
    state: AdamWState,
    lr: float,
) -> tuple[dict[str, Array], AdamWState]:
    """One AdamW update; weight decay is decoupled and applied after the Adam step."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params: dict[str, Array] = {}
    for name in sorted(params):
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise NumericsError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p_new = p - lr * update
        wd = state.weight_decay.get(name, 0.0)
        if wd:
            p_new = p_new - lr * wd * p_new
        new_params[name] = p_new
    return new_params, state
