"""Classifier heads, minibatch logit masking, and masked cross-entropy.

The cosine head scores a feature against per-class prototype vectors by
cosine similarity over a temperature, so prototype and feature norms
cannot tilt predictions. Masking drops the classes absent from the
current minibatch out of the loss's log-sum-exp entirely (the "-inf" in
the mask is realized as exclusion, never as an arithmetic value), which
makes the gradient of every masked prototype exactly zero. At inference
no mask is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Xoshiro256

NORM_EPS = 1e-8


@dataclass
class CosineHead:
    prototypes: Tensor   # [C, D], learnable; rows init to unit norm
    tau: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @classmethod
    def init(cls, num_classes: int, dim: int, seed: int, tau: float = 0.1) -> "CosineHead":
        rng = Xoshiro256(seed)
        rows = rng.normal((num_classes, dim))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        return cls(prototypes=Tensor(rows, requires_grad=True), tau=tau)

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    def learnables(self) -> list[Tensor]:
        return [self.prototypes]


@dataclass
class LinearHead:
    weight: Tensor  # [C, D], learnable
    bias: Tensor    # [C], learnable

    @classmethod
    def init(cls, num_classes: int, dim: int) -> "LinearHead":
        # zero init: class weight norms start at 0 and grow as classes appear
        return cls(weight=Tensor(np.zeros((num_classes, dim)), requires_grad=True),
                   bias=Tensor(np.zeros(num_classes), requires_grad=True))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def learnables(self) -> list[Tensor]:
        return [self.weight, self.bias]


def cosine_scores(g: Tensor, prototypes: Tensor, tau: float) -> Tensor:
    """cos(g_b, c_c) / tau for every (row, prototype) pair -> [B, C].

    The denominator is max(|g_b|*|c_c|, NORM_EPS): using max instead of an
    additive epsilon keeps the logits exactly invariant to positive
    rescaling of either side whenever the norms are nonnegligible, and a
    zero vector scores 0 instead of NaN. The cosine is clipped to [-1, 1]
    forward-only so accumulated rounding can never push a logit outside
    [-1/tau, 1/tau].
    """
    gd, pd = g.data, prototypes.data
    n_g = np.sqrt(np.sum(gd * gd, axis=1, keepdims=True))        # [B,1]
    n_p = np.sqrt(np.sum(pd * pd, axis=1, keepdims=True))        # [C,1]
    dots = ad._ordered_matmul(gd, pd.T)                          # [B,C]
    denom = n_g * n_p.T
    guarded = denom < NORM_EPS
    safe = np.where(guarded, NORM_EPS, denom)
    raw = dots / safe
    cos = np.clip(raw, -1.0, 1.0)
    z = cos / tau

    def bw(grad_z: np.ndarray) -> None:
        dcos = grad_z / tau
        a = dcos / safe
        live = ~guarded
        if g.requires_grad:
            dg = ad._ordered_matmul(a, pd)
            s_g = np.sum(np.where(live, dcos * raw, 0.0), axis=1, keepdims=True)
            dg -= s_g / np.maximum(n_g * n_g, NORM_EPS * NORM_EPS) * gd
            ad.accumulate(g, dg)
        if prototypes.requires_grad:
            dp = ad._ordered_matmul(a.T, gd)
            s_p = np.sum(np.where(live, dcos * raw, 0.0), axis=0)[:, None]
            dp -= s_p / np.maximum(n_p * n_p, NORM_EPS * NORM_EPS) * pd
            ad.accumulate(prototypes, dp)

    return ad.from_op(z, (g, prototypes), bw)


def cosine_logits(g: Tensor, head: CosineHead) -> Tensor:
    return cosine_scores(g, head.prototypes, head.tau)


def linear_logits(g: Tensor, head: LinearHead) -> Tensor:
    """Affine scores g @ W^T + b."""
    scores = ad.matmul(g, ad.transpose(head.weight))
    bias = head.bias

    def bw(grad: np.ndarray) -> None:
        ad.accumulate(scores, grad)
        ad.accumulate(bias, np.sum(grad, axis=0))

    return ad.from_op(scores.data + bias.data, (scores, bias), bw)


def logits_for(g: Tensor, head: CosineHead | LinearHead) -> Tensor:
    if isinstance(head, CosineHead):
        return cosine_logits(g, head)
    return linear_logits(g, head)


class LogitMask:
    """Which classes stay in the log-sum-exp. Stored as a keep-vector; the
    conventional 0 / -inf mask is available for display via as_vector()."""

    def __init__(self, keep: np.ndarray):
        self.keep = np.asarray(keep, dtype=bool)

    @property
    def num_classes(self) -> int:
        return self.keep.size

    def as_vector(self) -> np.ndarray:
        vec = np.zeros(self.keep.size)
        vec[~self.keep] = -np.inf
        return vec

    def __eq__(self, other):
        return isinstance(other, LogitMask) and np.array_equal(self.keep, other.keep)


def make_mask(labels, num_classes: int) -> LogitMask:
    """Mask keeping exactly the classes present in the minibatch labels."""
    labels = np.asarray(list(labels), dtype=np.int64)
    if labels.size == 0:
        raise ValueError("make_mask needs a nonempty label set")
    if labels.min() < 0 or labels.max() >= num_classes:
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise ValueError(f"label {bad} outside [0, {num_classes})")
    keep = np.zeros(num_classes, dtype=bool)
    keep[labels] = True
    return LogitMask(keep)


def all_classes_mask(num_classes: int) -> LogitMask:
    return LogitMask(np.ones(num_classes, dtype=bool))


def masked_softmax(z: np.ndarray, mask: LogitMask) -> np.ndarray:
    """Row softmax restricted to unmasked classes; masked entries are an
    exact 0.0, not a small number."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    keep = mask.keep
    out = np.zeros_like(z)
    zk = z[:, keep]
    m = np.max(zk, axis=1, keepdims=True)
    e = np.exp(zk - m)
    out[:, keep] = e / np.sum(e, axis=1, keepdims=True)
    return out


def masked_ce_loss(z: Tensor, mask: LogitMask, labels) -> Tensor:
    """Mean cross-entropy over the batch with masked classes excluded from
    the log-sum-exp. Gradients never touch masked columns."""
    y = np.asarray(list(labels), dtype=np.int64)
    b, c = z.shape
    if mask.num_classes != c:
        raise ValueError(f"mask covers {mask.num_classes} classes, logits have {c}")
    if y.shape != (b,):
        raise ValueError(f"{y.size} labels for {b} logit rows")
    if not mask.keep[y].all():
        bad = y[~mask.keep[y]][0]
        raise ValueError(f"label {bad} is masked out; mask/batch mismatch")
    keep = mask.keep
    zk = z.data[:, keep]
    m = np.max(zk, axis=1, keepdims=True)
    e = np.exp(zk - m)
    lse = m[:, 0] + np.log(np.sum(e, axis=1))
    losses = lse - z.data[np.arange(b), y]
    loss = np.mean(losses)

    def bw(grad: np.ndarray) -> None:
        scale = grad.reshape(()) / b
        dz = np.zeros_like(z.data)
        dz[:, keep] = e / np.sum(e, axis=1, keepdims=True)
        dz[np.arange(b), y] -= 1.0
        dz *= scale
        dz[:, ~keep] = 0.0   # exact zeros, including the subtracted labels column
        ad.accumulate(z, dz)

    return ad.from_op(np.float64(loss), (z,), bw)


def predict(g: Tensor, head: CosineHead | LinearHead) -> np.ndarray:
    """Argmax over all classes (no masking at inference); ties go to the
    lowest class index."""
    with ad.no_grad():
        z = logits_for(g, head)
    return np.argmax(z.data, axis=1)


def prototype_norms(head: CosineHead | LinearHead,
                    order: list[int] | None = None) -> np.ndarray:
    """Per-class L2 norm of the prototype (or linear weight row). `order`
    reorders the output, e.g. by when each class was first seen."""
    w = head.prototypes.data if isinstance(head, CosineHead) else head.weight.data
    norms = np.linalg.norm(w, axis=1)
    if order is not None:
        norms = norms[np.asarray(order, dtype=np.int64)]
    return norms
