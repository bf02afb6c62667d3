import math

import numpy as np
import pytest

from oracles import softmax_loop
from tcalib.attributes import rank_attributes
from tcalib.embedcore import AugmentationConfig
from tcalib.errors import InvalidArgumentError, NumericFailureError
from tcalib.objective import LossWeights, evaluate_prompt, intra_class_loss
from tcalib.optim import AdamW, GradientDescent
from tcalib.tuner import (
    EnsembleSpec,
    OptimizerKind,
    TunerConfig,
    class_text_embeddings,
    ensemble_predict,
    init_prompt,
    predict,
    prompt_class_set,
    sample_logits,
    tune_on_sample,
    view_embeddings,
)

AUG = AugmentationConfig(n_views=16, seed=5)


def reference_adamw(x, grad_fn, lr, b1, b2, eps, wd, steps):
    """Scalar AdamW written out term by term."""
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        x = x - lr * wd * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(x)
    return out


@pytest.mark.parametrize("wd", [0.0, 0.01])
def test_adamw_matches_reference_on_quadratic(wd):
    def grad(x):
        return 2.0 * 3.0 * (x - 1.5)

    ref = reference_adamw(4.0, grad, 0.05, 0.9, 0.999, 1e-8, wd, 100)
    opt = AdamW(0.05, (0.9, 0.999), 1e-8, wd)
    x = np.array([4.0])
    for expected in ref:
        x = opt.step(x, grad(x))
        assert abs(float(x[0]) - expected) <= 1e-12


def test_adamw_first_step_is_signed_lr():
    opt = AdamW(0.005)
    x = opt.step(np.zeros(3), np.array([2.0, -0.5, 1e-3]))
    np.testing.assert_allclose(x, [-0.005, 0.005, -0.005], rtol=1e-4)


def test_gradient_descent_step():
    x = GradientDescent(0.1).step(np.array([1.0, 2.0]), np.array([1.0, -1.0]))
    np.testing.assert_allclose(x, [0.9, 2.1], atol=1e-15)


def test_init_prompt_counts(ctx, catalog):
    names = catalog.class_names[:3]
    ranked = {n: list(catalog[n])[:2] for n in names}
    p = init_prompt("a photo of a", names, ctx, ranked)
    assert p.prefix.shape == (4, 64)
    assert len(p.frozen) == 6
    assert list(p.owner) == [0, 0, 1, 1, 2, 2]
    assert [t.frozen for t in p.prompt_tokens(0)] == [False] * 4 + [True] * len(p.frozen[0])


def test_init_prompt_is_deterministic(ctx, catalog):
    a = init_prompt("a photo of a", catalog.class_names, ctx, {n: catalog[n] for n in catalog.class_names})
    b = init_prompt("a photo of a", catalog.class_names, ctx, {n: catalog[n] for n in catalog.class_names})
    assert a.prefix.tobytes() == b.prefix.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.frozen, b.frozen))


def test_single_attribute_has_zero_intra(ctx, catalog):
    p = init_prompt("a photo of a", catalog.class_names, ctx, {n: catalog[n][:1] for n in catalog.class_names})
    assert intra_class_loss(prompt_class_set(p, ctx)) == 0.0


def test_missing_attributes(ctx, catalog):
    names = catalog.class_names
    ranked = {n: catalog[n] for n in names[1:]}
    with pytest.raises(InvalidArgumentError):
        init_prompt("a photo of a", names, ctx, ranked)
    p = init_prompt("a photo of a", names, ctx, ranked, permissive=True)
    assert p.attributes[0] == (names[0],)
    with pytest.raises(InvalidArgumentError):
        init_prompt("  ", names, ctx, ranked)


def test_zero_learning_rate_changes_nothing(ctx, attr_prompt, rng):
    raw = rng.standard_normal(32)
    res = tune_on_sample(raw, attr_prompt, TunerConfig(learning_rate=0.0, n_views=16), AUG, ctx)
    assert res.prompt.prefix.tobytes() == attr_prompt.prefix.tobytes()
    before = evaluate_prompt(attr_prompt.prefix, attr_prompt.layout, ctx.encoder,
                             view_embeddings(raw, 16, AUG, ctx), ctx.classifier, LossWeights(), 0.1, with_grad=False)
    assert res.final_probs.tobytes() == before.view_probs[before.retained_view_indices].mean(axis=0).tobytes()


def test_frozen_tokens_bitwise_stable(ctx, attr_prompt, rng):
    cfg = TunerConfig(n_steps=5, n_views=16, weights=LossWeights(10, 35))
    res = tune_on_sample(rng.standard_normal(32), attr_prompt, cfg, AUG, ctx)
    assert not np.array_equal(res.prompt.prefix, attr_prompt.prefix)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(res.prompt.frozen, attr_prompt.frozen))
    assert all(br.grad_frozen.tobytes() == np.zeros_like(br.grad_frozen).tobytes() for br in res.history)
    assert len(res.history) == 5


def test_tuning_is_reproducible(ctx, attr_prompt, rng):
    raw = rng.standard_normal(32)
    cfg = TunerConfig(n_views=16, weights=LossWeights(10, 35))
    a = tune_on_sample(raw, attr_prompt, cfg, AUG, ctx)
    b = tune_on_sample(raw, attr_prompt, cfg, AUG, ctx)
    assert a.prompt.prefix.tobytes() == b.prompt.prefix.tobytes()
    assert a.final_probs.tobytes() == b.final_probs.tobytes()


@pytest.mark.parametrize("seed", range(8))
def test_small_gradient_step_descends(ctx, attr_prompt, seed):
    raw = np.random.default_rng(seed).standard_normal(32)
    cfg = TunerConfig(learning_rate=1e-4, optimizer=OptimizerKind.SGD, n_views=16)
    res = tune_on_sample(raw, attr_prompt, cfg, AUG, ctx)
    first = res.history[0]
    views = view_embeddings(raw, 16, AUG, ctx)
    after = evaluate_prompt(res.prompt.prefix, attr_prompt.layout, ctx.encoder, views, ctx.classifier,
                            LossWeights(), 0.1, retained=first.retained_view_indices, with_grad=False)
    assert after.l_tpt <= first.l_tpt


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_step(ctx, attr_prompt, rng):
    cfg = TunerConfig(learning_rate=1e300, optimizer=OptimizerKind.SGD, n_steps=3, n_views=16,
                      weights=LossWeights(10, 35))
    with pytest.raises(NumericFailureError) as info:
        tune_on_sample(rng.standard_normal(32), attr_prompt, cfg, AUG, ctx)
    assert info.value.step is not None


def test_predict_matches_softmax_oracle(ctx, attr_prompt, rng):
    raw = rng.standard_normal(32)
    pred = predict(raw, attr_prompt, ctx)
    text = class_text_embeddings(attr_prompt, ctx)
    img = ctx.encoder.encode_image(raw).values
    ref = softmax_loop([float(img @ t) / 0.01 for t in text])
    np.testing.assert_allclose(pred.probs, ref, atol=1e-12)
    assert pred.label == int(np.argmax(ref))
    assert pred.confidence == max(pred.probs)


def test_predict_picks_matching_class(ctx, attr_prompt):
    text = class_text_embeddings(attr_prompt, ctx)
    back = np.linalg.pinv(ctx.encoder.image_proj)
    assert predict(back @ text[2], attr_prompt, ctx).label == 2


def test_tie_goes_to_lowest_index(small_ctx):
    p = init_prompt("a photo of a", ["x", "x"], small_ctx)
    pred = predict(np.ones(8), p, small_ctx)
    assert pred.label == 0 and pred.confidence == 0.5


def test_ensemble_single_template_equals_predict(ctx, attr_prompt, rng):
    raw = rng.standard_normal(32)
    a = ensemble_predict(raw, EnsembleSpec(("a photo of a",)), [attr_prompt], ctx)
    b = predict(raw, attr_prompt, ctx)
    assert a.label == b.label and np.array_equal(a.probs, b.probs)


def test_ensemble_averages_logits(ctx, catalog, rng):
    raw = rng.standard_normal(32)
    ranked = {n: rank_attributes(n, catalog[n], ctx.encoder, 0, 2) for n in catalog.class_names}
    prompts = [init_prompt(t, catalog.class_names, ctx, ranked) for t in ("a photo of a", "itap of a")]
    l1, l2 = (sample_logits(raw, p, ctx) for p in prompts)
    ref = softmax_loop([(x + y) / 2 for x, y in zip(l1, l2)])
    out = ensemble_predict(raw, EnsembleSpec(("a photo of a", "itap of a")), prompts, ctx)
    np.testing.assert_allclose(out.probs, ref, atol=1e-12)
    same = ensemble_predict(raw, EnsembleSpec(("a", "b")), [prompts[0], prompts[0]], ctx)
    np.testing.assert_allclose(same.probs, predict(raw, prompts[0], ctx).probs, atol=1e-15)
    with pytest.raises(InvalidArgumentError):
        ensemble_predict(raw, EnsembleSpec(("a", "b")), prompts[:1], ctx)


def test_tuner_config_validation():
    with pytest.raises(InvalidArgumentError):
        TunerConfig(rho=0.0)
    with pytest.raises(InvalidArgumentError):
        TunerConfig(learning_rate=-1.0)
