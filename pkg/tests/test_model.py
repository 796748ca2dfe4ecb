import math

import numpy as np
import pytest

from admtl.model import (VARIANTS, ConfigError, ModelConfig, MtlModel, adversarial_loss, batch_loss, forward_task,
                         predict, predict_proba, total_loss)
from admtl.tensor import GradientTape, finite_difference_check
from admtl.text import TaskSpec

from _support import TINY, fd_reference, random_examples, summed_loss, tiny_model, tiny_vocab, two_specs


def batches_for(model, seed=1, n=3):
    rng = np.random.default_rng(seed)
    out = []
    for spec in model.task_specs:
        out.append(model.batch(random_examples(spec.task_id, spec.labels, n, rng), spec.task_id))
    return out


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_forward_rows_are_distributions(variant):
    model, _ = tiny_model(variant)
    for b in batches_for(model):
        probs = forward_task(b, b.task_id, model).probs.data
        assert probs.shape == (3, len(model.head(b.task_id).labels))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_stl_has_no_shared_path_or_discriminator():
    model, _ = tiny_model("stl")
    assert model.shared is None and model.discriminator is None
    assert set(model.parameter_groups()) == {"embedding", "task:a", "task:b"}
    res = forward_task(batches_for(model)[0], "a", model)
    assert res.shared is None and res.attention == {"private": None}


def test_inference_is_deterministic_despite_dropout():
    model, _ = tiny_model(dropout_rate=0.5)
    b = batches_for(model)[0]
    first = forward_task(b, "a", model, "infer").probs.data
    assert np.array_equal(first, forward_task(b, "a", model, "infer").probs.data)
    trained = forward_task(b, "a", model, "train", np.random.default_rng(0)).probs.data
    assert not np.array_equal(first, trained)


class TestDiscriminator:
    def four_task_model(self):
        specs = [TaskSpec(t, ("x", "y")) for t in "abcd"]
        model, _ = tiny_model(specs=specs)
        model.discriminator.output.w.data[...] = 0.0
        model.discriminator.output.b.data[...] = 0.0
        return model

    def test_uniform_discriminator_loss(self):
        model = self.four_task_model()
        feature = np.random.default_rng(0).normal(size=(2, TINY["hidden_neurons_feed_forward"]))
        assert adversarial_loss(feature, [0, 3], model).data == pytest.approx(2 * math.log(4), abs=1e-12)

    def test_single_task_output_is_constant(self, caplog):
        model, _ = tiny_model(specs=[TaskSpec("a", ("x", "y"))])
        assert "single task" in caplog.text
        feature = np.random.default_rng(0).normal(size=(3, TINY["hidden_neurons_feed_forward"]))
        assert adversarial_loss(feature, [0, 0, 0], model).data == 0.0

    def test_initial_loss_near_chance(self):
        model, _ = tiny_model()
        losses = []
        for b in batches_for(model, n=20):
            k = model.task_index[b.task_id]
            shared = forward_task(b, b.task_id, model).shared
            losses.append(adversarial_loss(shared, np.full(len(b), k), model).data / len(b))
        assert abs(np.mean(losses) - math.log(2)) < 0.2

    def test_task_label_range(self):
        model, _ = tiny_model()
        with pytest.raises(ValueError, match=r"\[0, 2\)"):
            adversarial_loss(np.zeros((1, TINY["hidden_neurons_feed_forward"])), [2], model)

    def test_reversal_flips_encoder_gradient_only(self):
        model, _ = tiny_model(grl_lambda=0.7)
        b = batches_for(model)[0]
        k = np.zeros(len(b), dtype=int)
        probe = model.shared.projection.w
        disc = model.discriminator.hidden.w
        grads = {}
        for reverse in (True, False):
            with GradientTape() as tape:
                shared = forward_task(b, "a", model).shared
                loss = adversarial_loss(shared, k, model, reverse=reverse)
            grads[reverse] = tape.backward(loss, [probe, disc])
        np.testing.assert_allclose(grads[True][probe], -0.7 * grads[False][probe], atol=1e-15)
        assert np.array_equal(grads[True][disc], grads[False][disc])
        assert np.any(grads[True][probe] != 0)

    def test_finite_differences(self):
        model, _ = tiny_model(randomize_biases=True, beta=0.5)
        batches = batches_for(model)
        f = summed_loss(model, batches)
        for p in model.discriminator.parameters():
            assert finite_difference_check(f, p, eps=1e-5, reference=fd_reference(model, batches, p)) < 1e-5


class TestTotalLoss:
    def test_weighted_sum(self):
        assert total_loss([1.0, 0.8], 0.46, 1.0, 0.5).data == pytest.approx(2.03, abs=1e-12)

    def test_beta_zero_drops_adversary(self):
        assert total_loss([1.5], 123.0, 2.0, 0.0).data == 3.0

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            total_loss([1.0], None, 0.0, 0.1)

    def test_gradient_is_linear_in_components(self):
        model, _ = tiny_model(beta=0.3, alpha=2.0)
        b = batches_for(model)[1]
        params = model.parameters()
        parts = {}
        for which in ("ce", "adv", "both"):
            with GradientTape() as tape:
                total, ce, adv, _ = batch_loss(model, b, "infer", None)
                target = {"ce": 2.0 * ce, "adv": 0.3 * adv, "both": total}[which]
            parts[which] = tape.backward(target, params)
        for p in params:
            np.testing.assert_allclose(parts["both"][p], parts["ce"][p] + parts["adv"][p], atol=1e-13)

    def test_zero_beta_leaves_discriminator_untouched(self):
        model, _ = tiny_model()
        b = batches_for(model)[0]
        with GradientTape() as tape:
            total, ce, adv, _ = batch_loss(model, b, "infer", None)
            loss = total_loss([ce], adv, 1.0, 0.0)
        grads = tape.backward(loss, model.discriminator.parameters())
        assert all(np.all(g == 0.0) for g in grads.values())


def test_task_heads_are_isolated():
    model, _ = tiny_model()
    b = batches_for(model)[0]
    with GradientTape() as tape:
        total = batch_loss(model, b, "infer", None)[0]
    grads = tape.backward(total, model.parameters())
    assert all(np.all(grads[p] == 0.0) for p in model.heads["b"].parameters())
    assert any(np.any(grads[p] != 0.0) for p in model.heads["a"].parameters())


def test_parameter_groups_partition():
    model, _ = tiny_model()
    groups = model.parameter_groups()
    flat = [p for g in groups.values() for p in g]
    assert len({id(p) for p in flat}) == len(flat) == len(model.parameters())
    names = [p.name for p in flat]
    assert len(set(names)) == len(names)
    assert set(groups) == {"embedding", "shared", "task:a", "task:b", "discriminator"}


class TestPredict:
    def test_tie_goes_to_first_label(self):
        model, rng = tiny_model("stl")
        clf = model.heads["a"].classifier
        clf.w.data[...] = 0.0
        clf.b.data[...] = 0.0
        (ex,) = random_examples("a", ("x", "y", "z"), 1, rng)
        assert predict(ex, "a", model) == "x"

    def test_matches_argmax_of_probabilities(self):
        model, rng = tiny_model()
        exs = random_examples("a", ("x", "y", "z"), 5, rng)
        probs, ids = predict_proba(model, exs, "a")
        assert ids == [e.example_id for e in exs]
        assert [predict(e, "a", model) for e in exs] == [("x", "y", "z")[i] for i in probs.argmax(axis=1)]

    def test_unknown_task(self):
        model, rng = tiny_model()
        with pytest.raises(KeyError, match="unknown task"):
            predict(random_examples("q", ("x", "y"), 1, rng)[0], "q", model)


class TestConfig:
    def test_all_problems_listed(self):
        cfg = ModelConfig(variant="bogus", embedding_dimension=0, dropout_rate=1.5, alpha=0.0)
        with pytest.raises(ConfigError) as info:
            cfg.validate()
        text = str(info.value)
        for field in ("variant", "embedding_dimension", "dropout_rate", "alpha"):
            assert field in text
        assert len(info.value.errors) == 4

    @pytest.mark.parametrize("variant, beta", [("mtl_adversarial", 0.0), ("stl", 0.05)])
    def test_beta_must_match_variant(self, variant, beta):
        with pytest.raises(ConfigError, match="beta"):
            ModelConfig(variant=variant, beta=beta).validate()

    def test_for_variant_zeroes_beta(self):
        assert ModelConfig.for_variant("mtl_shared").beta == 0.0
        assert ModelConfig.for_variant("mtl_adversarial").beta == 0.05

    def test_round_trip(self):
        cfg = ModelConfig.for_variant("stl_attention", **TINY)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_model_rejects_invalid_config(self):
        with pytest.raises(ConfigError):
            MtlModel(ModelConfig(variant="stl", beta=1.0), two_specs(), tiny_vocab(), np.random.default_rng(0))
