"""Training objectives: word loss, bag loss, weight schedule, optimizer.

Both loss terms are means over the batch.  The word loss is the negative
log probability of each gold token, summed over real target positions.  The
bag loss scores the sentence-level sigmoid probabilities against the bag
indicator; the default variant penalizes only the words present in the bag,
while ``full-bce`` adds the complement term for absent words.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import LOG_FLOOR, Node, ParameterStore
from .model import ordered_sum

BAG_LOSS_VARIANTS = ("paper", "full-bce")

_floor_hits = 0


def floor_hit_count() -> int:
    """How many gold probabilities have been clamped at the log floor."""
    return _floor_hits


def reset_floor_hits() -> None:
    global _floor_hits
    _floor_hits = 0


@dataclass(frozen=True)
class ScheduleParams:
    """Bag-weight schedule: weight(epoch) = min(cap, start + slope * epoch)."""

    cap: float = 1.0
    start: float = 0.1
    slope: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.start <= self.cap:
            raise ValueError(f"need 0 <= start <= cap, got start={self.start} cap={self.cap}")
        if self.slope < 0.0:
            raise ValueError(f"slope must be non-negative, got {self.slope}")

    @classmethod
    def baseline(cls) -> "ScheduleParams":
        return cls(cap=0.0, start=0.0, slope=0.0)


def bag_weight(epoch: int, params: ScheduleParams) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return min(params.cap, params.start + params.slope * epoch)


@dataclass
class LossBreakdown:
    word: float
    bag: float
    weight: float

    @property
    def total(self) -> float:
        return self.word + self.weight * self.bag


def word_loss(step_probs: Sequence[Node], targets: np.ndarray, mask: np.ndarray) -> Node:
    """Mean over the batch of the summed gold-token negative log likelihood.

    Positions with mask 0 contribute nothing.  Gold probabilities at or
    below the log floor are clamped (the log primitive does this) and
    counted on a module-level warning counter.
    """
    global _floor_hits
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=np.float64)
    steps = len(step_probs)
    if targets.ndim != 2 or targets.shape[1] != steps or mask.shape != targets.shape:
        raise ValueError(
            f"targets/mask of shape {targets.shape}/{mask.shape} do not cover {steps} steps"
        )
    batch = targets.shape[0]
    per_step = []
    for t, probs in enumerate(step_probs):
        picked = ad.pick_columns(probs, targets[:, t])
        _floor_hits += int(np.sum((picked.value[:, 0] <= LOG_FLOOR) & (mask[:, t] > 0)))
        masked = ad.scale_rows(ad.log(picked), ad.constant(mask[:, t : t + 1]))
        per_step.append(ad.sum_all(masked))
    return ad.scale(ordered_sum(per_step), -1.0 / batch)


def bag_loss(bag_probs: Node, indicator: np.ndarray, variant: str = "paper") -> Node:
    """Mean over the batch of the bag negative log likelihood.

    ``indicator`` rows hold the bag membership (counts when duplicates are
    kept); rows with an empty bag contribute zero.  The ``full-bce`` variant
    adds -(1 - b) * log(1 - p) for absent words.
    """
    if variant not in BAG_LOSS_VARIANTS:
        raise ValueError(f"unknown bag loss variant {variant!r}; choose from {BAG_LOSS_VARIANTS}")
    indicator = np.asarray(indicator, dtype=np.float64)
    if indicator.shape != bag_probs.value.shape:
        raise ValueError(
            f"indicator shape {indicator.shape} does not match bag probabilities "
            f"{bag_probs.value.shape}"
        )
    batch = indicator.shape[0]
    positive = ad.sum_all(ad.mul(ad.log(bag_probs), ad.constant(indicator)))
    if variant == "paper":
        return ad.scale(positive, -1.0 / batch)
    ones = ad.constant(np.ones_like(indicator))
    complement = ad.add(ones, ad.scale(bag_probs, -1.0))
    negative = ad.sum_all(ad.mul(ad.log(complement), ad.constant(1.0 - indicator)))
    return ad.scale(ad.add(positive, negative), -1.0 / batch)


def total_loss(word: Node, bag: Node | None, weight: float) -> Node:
    """word + weight * bag; the bag term is left out of the graph at weight 0."""
    if bag is None or weight == 0.0:
        return word
    return ad.add(word, ad.scale(bag, float(weight)))


def clip_gradients(store: ParameterStore, max_norm: float = 10.0) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the factor applied (1.0 when no clipping was needed).
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for _, node in store.items():
        total += float(np.sum(node.grad * node.grad))
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for _, node in store.items():
        node.grad *= factor
    return factor


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, lr: float = 3e-4, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        for name, node in store.items():
            state.m[name] = np.zeros_like(node.value)
            state.v[name] = np.zeros_like(node.value)
        return state


def adam_step(store: ParameterStore, state: AdamState) -> None:
    """One bias-corrected Adam update from the currently accumulated gradients."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1 ** state.step
    correct2 = 1.0 - b2 ** state.step
    for name, node in store.items():
        g = node.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        node.value -= state.lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
