"""Loss terms for test-time prompt calibration and their analytic gradients.

The scalar objective for one test sample is

    L = H(mean retained view probabilities) - alpha * ATFD + beta * mean_i MTAS_i

where ATFD is the mean distance of class-mean text embeddings from their grand
mean and MTAS_i is the mean distance of class i's per-attribute text embeddings
from their class mean. Gradients are propagated by hand through the fixed
graph (mean pool -> projection -> normalize -> class mean -> normalize ->
cosine/temperature -> softmax -> entropy) to the learnable prefix tokens only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embedcore import FrozenEncoder
from .errors import InvalidArgumentError

PROB_TOL = 1e-9


@dataclass(frozen=True)
class ClassifierConfig:
    temperature: float = 0.01
    n_classes: int | None = None

    def __post_init__(self):
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise InvalidArgumentError("temperature must be a positive finite number")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidArgumentError(f"{name} must be finite and nonnegative")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_logits(image_embeds, class_embeds, temperature: float) -> np.ndarray:
    """Cosine similarity over temperature; inputs are assumed unit-norm."""
    return np.asarray(image_embeds) @ np.asarray(class_embeds).T / temperature


def class_probabilities(image_embed, text_embeds, cfg: ClassifierConfig) -> np.ndarray:
    text = np.stack([np.asarray(t, dtype=np.float64) for t in text_embeds])
    if text.shape[0] < 2:
        raise InvalidArgumentError("need at least two classes")
    if cfg.n_classes is not None and text.shape[0] != cfg.n_classes:
        raise InvalidArgumentError(f"expected {cfg.n_classes} class embeddings, got {text.shape[0]}")
    image = np.asarray(image_embed, dtype=np.float64)
    return softmax(class_logits(image, text, cfg.temperature))


def entropy(p) -> np.ndarray | float:
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    return float(h) if h.ndim == 0 else h


def confidence_filter(view_probs, rho: float) -> list[int]:
    """Indices of the ceil(rho * N) lowest-entropy views, ascending; ties keep lower index."""
    probs = np.asarray(view_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InvalidArgumentError("view_probs must be a non-empty (N, K) array")
    if not 0 < rho <= 1:
        raise InvalidArgumentError("rho must lie in (0, 1]")
    n = probs.shape[0]
    # guard against rho * n landing a hair above an integer
    keep = max(1, min(n, math.ceil(rho * n - 1e-9)))
    order = np.argsort(entropy(probs), kind="stable")
    return sorted(int(i) for i in order[:keep])


def tpt_loss(view_probs, retained) -> float:
    probs = np.asarray(view_probs, dtype=np.float64)
    retained = list(retained)
    if not retained:
        raise InvalidArgumentError("retained view set is empty")
    return entropy(probs[retained].mean(axis=0))


@dataclass(frozen=True, eq=False)
class ClassTextSet:
    """Per-class groups of encoded prompt texts, stored flat.

    ``embeddings`` has one row per (class, attribute) prompt and ``owner`` gives
    the class index of each row. Groups may differ in size.
    """

    embeddings: np.ndarray
    owner: np.ndarray
    n_classes: int

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        owner = np.asarray(self.owner, dtype=np.int64)
        if emb.ndim != 2 or owner.shape != (emb.shape[0],):
            raise InvalidArgumentError("embeddings must be (R, d) with one owner per row")
        counts = np.bincount(owner, minlength=self.n_classes)
        if owner.min(initial=0) < 0 or counts.shape[0] != self.n_classes or np.any(counts == 0):
            raise InvalidArgumentError("every class needs at least one embedding")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "owner", owner)

    @classmethod
    def from_groups(cls, groups) -> "ClassTextSet":
        groups = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in groups]
        owner = np.concatenate([np.full(len(g), i) for i, g in enumerate(groups)])
        return cls(np.concatenate(groups), owner, len(groups))

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.n_classes)

    def group(self, i: int) -> np.ndarray:
        return self.embeddings[self.owner == i]

    def averaging_matrix(self) -> np.ndarray:
        a = np.zeros((self.n_classes, len(self.owner)))
        a[self.owner, np.arange(len(self.owner))] = 1.0
        return a / self.counts[:, None]

    @property
    def class_means(self) -> np.ndarray:
        return self.averaging_matrix() @ self.embeddings

    @property
    def grand_mean(self) -> np.ndarray:
        return self.class_means.mean(axis=0)


def mtas(class_set: ClassTextSet, class_index: int) -> float:
    g = class_set.group(class_index)
    return float(np.linalg.norm(g - g.mean(axis=0), axis=1).mean())


def intra_class_loss(class_set: ClassTextSet) -> float:
    return float(np.mean([mtas(class_set, i) for i in range(class_set.n_classes)]))


def atfd(class_set: ClassTextSet) -> float:
    if class_set.n_classes < 2:
        raise InvalidArgumentError("ATFD needs at least two classes")
    means = class_set.class_means
    return float(np.linalg.norm(means - means.mean(axis=0), axis=1).mean())


def combine(l_tpt: float, atfd_value: float, intra: float, weights: LossWeights) -> float:
    return l_tpt + weights.alpha * (-atfd_value) + weights.beta * intra


@dataclass
class LossBreakdown:
    l_tpt: float
    l_inter: float
    l_intra: float
    l_total: float
    retained_view_indices: list[int]
    grad_prompt: np.ndarray | None = None
    # masked gradient for every frozen (attribute/class) token row; all zeros
    grad_frozen: np.ndarray | None = None
    view_probs: np.ndarray | None = field(default=None, repr=False)
    class_set: ClassTextSet | None = field(default=None, repr=False)

    @property
    def atfd(self) -> float:
        return -self.l_inter


def total_loss(view_probs, retained, class_set: ClassTextSet, weights: LossWeights) -> LossBreakdown:
    """Loss values only; see :func:`evaluate_prompt` for the gradient."""
    retained = list(retained)
    l_tpt = tpt_loss(view_probs, retained)
    dispersion = atfd(class_set)
    intra = intra_class_loss(class_set)
    return LossBreakdown(
        l_tpt=l_tpt,
        l_inter=-dispersion,
        l_intra=intra,
        l_total=combine(l_tpt, dispersion, intra, weights),
        retained_view_indices=retained,
        view_probs=np.asarray(view_probs),
        class_set=class_set,
    )


@dataclass(frozen=True, eq=False)
class PromptLayout:
    """Frozen part of every (class, attribute) prompt, pre-summed.

    Row r is the prompt ``prefix + frozen tokens of r``; ``frozen_sum[r]`` is
    the sum of its frozen token vectors and ``length[r]`` its total token count
    including the prefix.
    """

    frozen_sum: np.ndarray
    length: np.ndarray
    owner: np.ndarray
    n_classes: int
    n_frozen_tokens: int = 0


def _safe_unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(x, axis=1)
    unit = np.zeros_like(x)
    nz = n > 0
    unit[nz] = x[nz] / n[nz, None]
    return unit, n


def prompt_embeddings(prefix: np.ndarray, layout: PromptLayout, encoder: FrozenEncoder) -> np.ndarray:
    pooled = (prefix.sum(axis=0)[None, :] + layout.frozen_sum) / layout.length[:, None]
    return encoder.encode_texts(pooled)


def class_embeddings(class_set: ClassTextSet) -> np.ndarray:
    means = class_set.class_means
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def evaluate_prompt(
    prefix: np.ndarray,
    layout: PromptLayout,
    encoder: FrozenEncoder,
    view_embeds: np.ndarray,
    classifier: ClassifierConfig,
    weights: LossWeights,
    rho: float,
    retained=None,
    with_grad: bool = True,
) -> LossBreakdown:
    """Forward pass of the total loss and, optionally, its gradient in the prefix.

    ``view_embeds`` are unit image embeddings of the augmented views. When
    ``retained`` is None the confidence filter picks the views; passing it
    explicitly holds the selection fixed (used by gradient checks).
    """
    prefix = np.asarray(prefix, dtype=np.float64)
    tau = classifier.temperature
    w = encoder.text_proj
    k = layout.n_classes

    pooled = (prefix.sum(axis=0)[None, :] + layout.frozen_sum) / layout.length[:, None]
    z = pooled @ w.T
    nz = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(nz == 0):
        raise InvalidArgumentError("a prompt pools to the zero vector")
    e = z / nz

    class_set = ClassTextSet(e, layout.owner, k)
    avg = class_set.averaging_matrix()
    means = avg @ e
    nm = np.linalg.norm(means, axis=1, keepdims=True)
    t = means / nm

    probs = softmax(class_logits(view_embeds, t, tau))
    if retained is None:
        retained = confidence_filter(probs, rho)
    retained = list(retained)
    pbar = probs[retained].mean(axis=0)
    l_tpt = entropy(pbar)

    spread = e - means[layout.owner]
    spread_unit, spread_norm = _safe_unit_rows(spread)
    per_class_mtas = avg @ spread_norm
    intra = float(per_class_mtas.mean())

    dev = means - means.mean(axis=0)
    dev_unit, dev_norm = _safe_unit_rows(dev)
    dispersion = float(dev_norm.mean())

    out = LossBreakdown(
        l_tpt=l_tpt,
        l_inter=-dispersion,
        l_intra=intra,
        l_total=combine(l_tpt, dispersion, intra, weights),
        retained_view_indices=retained,
        view_probs=probs,
        class_set=class_set,
    )
    if not with_grad:
        return out

    # entropy of the averaged retained prediction
    with np.errstate(divide="ignore"):
        g_pbar = np.where(pbar > 0, -(np.log(np.where(pbar > 0, pbar, 1.0)) + 1.0), 0.0)
    g_probs = np.zeros_like(probs)
    g_probs[retained] = g_pbar / len(retained)
    g_logits = probs * (g_probs - (probs * g_probs).sum(axis=1, keepdims=True))
    g_t = g_logits.T @ view_embeds / tau
    g_means = (g_t - t * (t * g_t).sum(axis=1, keepdims=True)) / nm

    # -alpha * ATFD; the grand mean depends on every class mean
    g_means -= weights.alpha * (dev_unit - dev_unit.mean(axis=0)) / k

    g_e = avg.T @ g_means

    # beta * mean_i MTAS_i; each spread row also depends on its class mean
    if weights.beta:
        row_w = 1.0 / class_set.counts[layout.owner]
        c = spread_unit * (row_w / k)[:, None]
        indicator = np.zeros((k, len(layout.owner)))
        indicator[layout.owner, np.arange(len(layout.owner))] = 1.0
        g_e += weights.beta * (c - avg.T @ (indicator @ c))

    g_z = (g_e - e * (e * g_e).sum(axis=1, keepdims=True)) / nz
    g_pooled = g_z @ w
    g_sum = (g_pooled / layout.length[:, None]).sum(axis=0)
    out.grad_prompt = np.repeat(g_sum[None, :], prefix.shape[0], axis=0)
    out.grad_frozen = np.zeros((layout.n_frozen_tokens, prefix.shape[1]))
    return out
