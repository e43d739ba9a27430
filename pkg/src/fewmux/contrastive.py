"""Pair mining over few labeled examples and the contrastive objectives.

From k labeled examples there are k(k-1)/2 unordered pairs; mining samples up
to R of each polarity without replacement. The ranking loss treats each
anchor's positive against the other positives in the batch as in-batch
negatives; the explicit loss consumes mined negatives directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor, ZeroNormError

POSITIVE = "positive"
NEGATIVE = "negative"

DEFAULT_PAIRS_PER_POLARITY = 20
DEFAULT_SCALE = 20.0


class MiningError(ValueError):
    """Pair mining cannot proceed on the given example set."""


class NoPositivePairsError(MiningError):
    pass


class NoNegativePairsError(MiningError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledExample:
    example_id: str
    task_id: int
    label: int
    text_tokens: tuple[int, ...] | None = None
    image_grid: np.ndarray | None = None

    @property
    def modalities(self) -> tuple[str, ...]:
        mods = []
        if self.text_tokens is not None:
            mods.append("text")
        if self.image_grid is not None:
            mods.append("image")
        return tuple(mods)


@dataclass(frozen=True, eq=False)
class ContrastivePair:
    anchor: LabeledExample
    other: LabeledExample
    polarity: str

    def __post_init__(self) -> None:
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise MiningError(f"unknown polarity {self.polarity!r}")
        if self.anchor.example_id == self.other.example_id:
            raise MiningError("self-pair")
        same = self.anchor.label == self.other.label
        if self.polarity == POSITIVE and not same:
            raise MiningError("positive pair with differing labels")
        if self.polarity == NEGATIVE and same:
            raise MiningError("negative pair with matching labels")


@dataclass(frozen=True)
class PairMiningConfig:
    pairs_per_polarity: int = DEFAULT_PAIRS_PER_POLARITY
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.pairs_per_polarity < 1:
            raise MiningError("pairs_per_polarity must be >= 1")


def potential_pair_count(k: int) -> int:
    """Number of unordered example pairs available from k examples."""
    if k < 0:
        raise MiningError("k must be non-negative")
    return k * (k - 1) // 2


def enumerate_pairs(examples: Sequence[LabeledExample]) -> tuple[list, list]:
    """All feasible (positive, negative) index pairs, in canonical order."""
    positives: list[tuple[int, int]] = []
    negatives: list[tuple[int, int]] = []
    for i in range(len(examples)):
        for j in range(i + 1, len(examples)):
            if examples[i].label == examples[j].label:
                positives.append((i, j))
            else:
                negatives.append((i, j))
    return positives, negatives


def mine_pairs(examples: Sequence[LabeledExample], cfg: PairMiningConfig) -> list[ContrastivePair]:
    """Sample up to R pairs per polarity, uniformly without replacement.

    Feasible sets smaller than R are returned whole. Deterministic for a
    fixed seed. Raises distinct errors when a polarity has no feasible pairs
    so the caller can pick a fallback per polarity.
    """
    if len(examples) < 2:
        raise MiningError("need at least two examples to mine pairs")
    positives, negatives = enumerate_pairs(examples)
    if not positives:
        raise NoPositivePairsError("no class holds two or more examples")
    if not negatives:
        raise NoNegativePairsError("all examples share one class")

    rng = np.random.default_rng(cfg.rng_seed)
    mined: list[ContrastivePair] = []
    for pool, polarity in ((positives, POSITIVE), (negatives, NEGATIVE)):
        order = rng.permutation(len(pool))[: cfg.pairs_per_polarity]
        for idx in order:
            i, j = pool[idx]
            mined.append(ContrastivePair(examples[i], examples[j], polarity))
    return mined


def _normalize_rows(mat: Tensor) -> Tensor:
    norms_sq = (mat * mat).sum(axis=1, keepdims=True)
    if np.any(norms_sq.data <= 0.0):
        raise ZeroNormError("embedding row with zero norm")
    return mat / ad.sqrt(norms_sq)


def mnr_loss(anchor_embs: Tensor, positive_embs: Tensor, scale: float = DEFAULT_SCALE) -> Tensor:
    """Multiple-negatives ranking loss over a batch of positive pairs.

    Row i's positive competes against every other row's positive in the
    batch under scaled cosine similarity:
    mean_i -log softmax_j(scale * cos(a_i, p_j))[i].
    """
    n = anchor_embs.shape[0]
    if n < 2:
        raise MiningError("ranking loss needs at least two pairs in the batch")
    if anchor_embs.shape != positive_embs.shape:
        raise MiningError("anchor/positive batches must have matching shapes")
    a_hat = _normalize_rows(anchor_embs)
    p_hat = _normalize_rows(positive_embs)
    sim = ad.matmul(a_hat, p_hat.T) * scale
    return ad.softmax_cross_entropy(sim, np.arange(n))


def explicit_pair_loss(
    anchor_embs: Tensor,
    other_embs: Tensor,
    polarities: Sequence[str],
    margin: float = 0.0,
) -> Tensor:
    """Mean of (1 - cos) over positives and max(0, cos - margin) over negatives."""
    n = anchor_embs.shape[0]
    if n < 1:
        raise MiningError("empty pair list")
    if anchor_embs.shape != other_embs.shape or len(polarities) != n:
        raise MiningError("pair batch shapes disagree")
    a_hat = _normalize_rows(anchor_embs)
    o_hat = _normalize_rows(other_embs)
    cos = (a_hat * o_hat).sum(axis=1)
    pos_mask = np.array([1.0 if p == POSITIVE else 0.0 for p in polarities])
    neg_mask = 1.0 - pos_mask
    per_pair = (1.0 - cos) * pos_mask + ad.relu(cos - margin) * neg_mask
    return per_pair.mean()


def grouped_pair_batches(labels: Sequence[int], rng: np.random.Generator) -> list[list[int]]:
    """Split pair indices into sub-batches with at most one pair per label.

    Keeps in-batch negatives truthful for the ranking loss. Leftover pairs
    from over-represented labels are appended round-robin, which may place a
    second same-label pair in a batch; batches of size one are never emitted
    unless only one distinct label exists.
    """
    by_label: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(idx)
    for queue in by_label.values():
        rng.shuffle(queue)

    if len(by_label) < 2:
        return [list(range(len(labels)))]

    rounds = max(len(q) for q in by_label.values())
    batches: list[list[int]] = []
    leftovers: list[int] = []
    for r in range(rounds):
        batch = [q[r] for q in by_label.values() if r < len(q)]
        if len(batch) >= 2:
            batches.append(batch)
        else:
            leftovers.extend(batch)
    for i, idx in enumerate(leftovers):
        batches[i % len(batches)].append(idx)
    return batches
