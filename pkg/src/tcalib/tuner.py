"""Prompt state construction, per-sample test-time tuning, prediction.

A prompt for class i and attribute j is ``prefix + attribute_j + class_i``.
Only the prefix tokens are learnable; attribute and class tokens are frozen.
The classifier scores class i with the normalized mean of its attribute
prompt embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .attributes import RankedAttributes
from .embedcore import (
    AugmentationConfig,
    EmbeddingVector,
    EncoderConfig,
    FrozenEncoder,
    TokenEmbedding,
    augment_array,
    feature_seed,
    token_matrix,
    tokenize,
)
from .errors import InvalidArgumentError, NumericFailureError
from .objective import (
    ClassifierConfig,
    ClassTextSet,
    LossBreakdown,
    LossWeights,
    PromptLayout,
    class_embeddings,
    class_logits,
    evaluate_prompt,
    softmax,
)
from .optim import AdamW, GradientDescent

DEFAULT_TEMPLATES = ("a photo of a", "a photo of the", "a picture of a", "a picture of the")


class OptimizerKind(str, Enum):
    ADAMW = "adaptive_moments_decoupled_decay"
    SGD = "plain_gradient_descent"


@dataclass(frozen=True)
class TunerConfig:
    learning_rate: float = 0.005
    n_steps: int = 1
    optimizer: OptimizerKind = OptimizerKind.ADAMW
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    rho: float = 0.1
    weights: LossWeights = LossWeights()
    n_views: int = 64

    def __post_init__(self):
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        object.__setattr__(self, "betas", tuple(self.betas))
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise InvalidArgumentError("learning_rate must be finite and >= 0")
        if self.n_steps < 1:
            raise InvalidArgumentError("n_steps must be >= 1")
        if not 0 < self.rho <= 1:
            raise InvalidArgumentError("rho must lie in (0, 1]")
        if self.n_views < 1:
            raise InvalidArgumentError("n_views must be >= 1")

    def make_optimizer(self):
        if self.optimizer is OptimizerKind.ADAMW:
            return AdamW(self.learning_rate, self.betas, self.epsilon, self.weight_decay)
        return GradientDescent(self.learning_rate, self.weight_decay)


@dataclass(frozen=True)
class EnsembleSpec:
    templates: tuple[str, ...] = DEFAULT_TEMPLATES

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise InvalidArgumentError("ensemble needs at least one template")


@dataclass(frozen=True)
class ZeroShotContext:
    """Frozen pieces shared by every episode: encoders, classifier head, token seed."""

    encoder: FrozenEncoder
    classifier: ClassifierConfig = ClassifierConfig()
    global_seed: int = 0

    @classmethod
    def from_config(cls, cfg: EncoderConfig, classifier=None, global_seed: int = 0):
        return cls(FrozenEncoder.from_config(cfg), classifier or ClassifierConfig(), global_seed)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PromptState:
    template: str
    prefix_words: tuple[str, ...]
    prefix: np.ndarray
    class_names: tuple[str, ...]
    attributes: tuple[tuple[str, ...], ...]
    # one (n_tokens, d_tok) matrix per prompt row, class-major
    frozen: tuple[np.ndarray, ...]
    owner: np.ndarray
    frozen_words: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "prefix", _readonly(self.prefix))
        object.__setattr__(self, "frozen", tuple(_readonly(f) for f in self.frozen))
        owner = np.array(self.owner, dtype=np.int64)
        owner.setflags(write=False)
        object.__setattr__(self, "owner", owner)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @cached_property
    def layout(self) -> PromptLayout:
        return PromptLayout(
            frozen_sum=np.stack([f.sum(axis=0) for f in self.frozen]),
            length=np.array([len(self.prefix) + len(f) for f in self.frozen], dtype=np.float64),
            owner=self.owner,
            n_classes=self.n_classes,
            n_frozen_tokens=sum(len(f) for f in self.frozen),
        )

    @property
    def prefix_tokens(self) -> list[TokenEmbedding]:
        return [
            TokenEmbedding(w, EmbeddingVector(v), frozen=False)
            for w, v in zip(self.prefix_words, self.prefix)
        ]

    def prompt_tokens(self, row: int) -> list[TokenEmbedding]:
        """Full token sequence of prompt row ``row``: learnable prefix then frozen tokens."""
        frozen = [
            TokenEmbedding(w, EmbeddingVector(v), frozen=True)
            for w, v in zip(self.frozen_words[row], self.frozen[row])
        ]
        return self.prefix_tokens + frozen

    def with_prefix(self, prefix: np.ndarray) -> "PromptState":
        return replace(self, prefix=prefix)


def _selected(entry) -> tuple[str, ...]:
    if isinstance(entry, RankedAttributes):
        return tuple(entry.selected)
    if isinstance(entry, str):
        return (entry,)
    return tuple(entry)


def init_prompt(
    template: str,
    classes: Sequence[str],
    ctx: ZeroShotContext,
    ranked: Mapping[str, RankedAttributes | Sequence[str]] | None = None,
    permissive: bool = False,
) -> PromptState:
    """Build the prompt state for every class.

    With ``ranked=None`` each class gets one prompt ``template + class name``
    (the plain hard prompt). Otherwise each selected attribute of a class
    yields one prompt row. A class with no attributes is an error unless
    ``permissive``, which substitutes the class name as its only attribute.
    """
    if not template or not template.strip():
        raise InvalidArgumentError("template must be non-empty")
    if len(classes) < 2:
        raise InvalidArgumentError("need at least two classes")
    d_tok = ctx.encoder.d_tok
    words = tuple(tokenize(template))
    prefix = token_matrix(template, d_tok, ctx.global_seed)
    frozen, owner, attrs_per_class, frozen_words = [], [], [], []
    for i, name in enumerate(classes):
        if ranked is None:
            attrs = ()
            segments = [name]
        else:
            attrs = _selected(ranked.get(name, ()))
            if not attrs:
                if not permissive:
                    raise InvalidArgumentError(f"class {name!r} has no selected attributes")
                attrs = (name,)
            segments = [f"{a} {name}" for a in attrs]
        attrs_per_class.append(attrs)
        for seg in segments:
            frozen.append(token_matrix(seg, d_tok, ctx.global_seed))
            frozen_words.append(tuple(tokenize(seg)))
            owner.append(i)
    return PromptState(
        template=template,
        prefix_words=words,
        prefix=prefix,
        class_names=tuple(classes),
        attributes=tuple(attrs_per_class),
        frozen=tuple(frozen),
        owner=np.array(owner),
        frozen_words=tuple(frozen_words),
    )


def prompt_class_set(prompt: PromptState, ctx: ZeroShotContext) -> ClassTextSet:
    lay = prompt.layout
    pooled = (prompt.prefix.sum(axis=0)[None, :] + lay.frozen_sum) / lay.length[:, None]
    return ClassTextSet(ctx.encoder.encode_texts(pooled), lay.owner, lay.n_classes)


def class_text_embeddings(prompt: PromptState, ctx: ZeroShotContext) -> np.ndarray:
    return class_embeddings(prompt_class_set(prompt, ctx))


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float
    probs: np.ndarray


def _prediction(probs: np.ndarray) -> Prediction:
    label = int(np.argmax(probs))  # lowest index wins ties
    return Prediction(label, float(probs[label]), probs)


def sample_logits(raw_feature, prompt: PromptState, ctx: ZeroShotContext) -> np.ndarray:
    image = ctx.encoder.encode_image(raw_feature).values
    return class_logits(image, class_text_embeddings(prompt, ctx), ctx.classifier.temperature)


def predict(raw_feature, prompt: PromptState, ctx: ZeroShotContext) -> Prediction:
    """Zero-shot prediction on the unaugmented sample."""
    return _prediction(softmax(sample_logits(raw_feature, prompt, ctx)))


def ensemble_predict(raw_feature, spec: EnsembleSpec, prompts: Sequence[PromptState], ctx: ZeroShotContext) -> Prediction:
    """Average pre-softmax logits over one tuned prompt per template, then softmax."""
    if len(prompts) == 0 or len(prompts) != len(spec.templates):
        raise InvalidArgumentError(
            f"{len(spec.templates)} templates but {len(prompts)} tuned prompts"
        )
    logits = np.mean([sample_logits(raw_feature, p, ctx) for p in prompts], axis=0)
    return _prediction(softmax(logits))


@dataclass
class TuneResult:
    prompt: PromptState
    history: list[LossBreakdown]
    final_probs: np.ndarray
    final: LossBreakdown = field(repr=False)


def view_embeddings(raw_feature, n_views: int, aug: AugmentationConfig, ctx: ZeroShotContext) -> np.ndarray:
    raw = np.asarray(raw_feature, dtype=np.float64)
    cfg = replace(aug, n_views=n_views, seed=feature_seed(raw, aug.seed))
    return ctx.encoder.encode_images(augment_array(raw, cfg))


def tune_on_sample(
    raw_feature,
    prompt: PromptState,
    cfg: TunerConfig,
    aug: AugmentationConfig,
    ctx: ZeroShotContext,
    views: np.ndarray | None = None,
) -> TuneResult:
    """One test-time tuning episode on a single sample.

    Views are seeded from the sample's content, so the episode does not depend
    on the sample's position in a dataset. ``prompt`` is never modified.
    """
    if views is None:
        views = view_embeddings(raw_feature, cfg.n_views, aug, ctx)
    layout = prompt.layout
    opt = cfg.make_optimizer()
    prefix = np.array(prompt.prefix)
    history = []
    for step in range(cfg.n_steps):
        br = evaluate_prompt(prefix, layout, ctx.encoder, views, ctx.classifier, cfg.weights, cfg.rho)
        if not (np.isfinite(br.l_total) and np.all(np.isfinite(br.grad_prompt))):
            raise NumericFailureError("non-finite loss or gradient", step=step)
        history.append(br)
        prefix = opt.step(prefix, br.grad_prompt)
        if not np.all(np.isfinite(prefix)):
            raise NumericFailureError("non-finite prompt after update", step=step)
    final = evaluate_prompt(
        prefix, layout, ctx.encoder, views, ctx.classifier, cfg.weights, cfg.rho, with_grad=False
    )
    if not np.isfinite(final.l_total):
        raise NumericFailureError("non-finite loss after tuning", step=cfg.n_steps)
    final_probs = final.view_probs[final.retained_view_indices].mean(axis=0)
    return TuneResult(prompt.with_prefix(prefix), history, final_probs, final)
