import numpy as np
import pytest

from conftest import grad_rel_err, model_grads, model_theta, set_model_theta
from crossemo.errors import ShapeError, UsageError
from crossemo.model import (
    ModelConfig,
    Standardization,
    build_model,
    drop_auxiliary,
    encode,
    encoder_backward,
    encoder_forward,
    head_backward,
    head_forward,
    infer_sequence,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from crossemo.numkit import SeededRng, finite_diff_grad


def std_for(dim):
    return Standardization(mean=np.zeros(dim), var=np.ones(dim))


def small_model(task="regression", seed=0, n_classes=None, shared_type="gru"):
    cfg = ModelConfig(encoder_layers=(5, 4), shared_layers=(3,), shared_layer_type=shared_type)
    model = build_model(task, "audio", {"audio": 6, "video": 9}, cfg, SeededRng(seed), n_classes)
    model.standardization["audio"] = std_for(6)
    model.standardization["video"] = std_for(9)
    return model


class TestEncode:
    def test_recola_shape_width(self):
        cfg = ModelConfig(encoder_layers=(120, 120), shared_layers=(120, 120))
        model = build_model("regression", "audio", {"audio": 88}, cfg, SeededRng(1))
        model.standardization["audio"] = std_for(88)
        emb = encode(model, "audio", np.random.default_rng(0).normal(size=(7, 88)))
        assert emb.shape == (7, 120)

    def test_shared_width_across_modalities(self):
        model = small_model()
        x = np.random.default_rng(0)
        ea = encode(model, "audio", x.normal(size=(10, 6)))
        ev = encode(model, "video", x.normal(size=(10, 9)))
        assert ea.shape[1] == ev.shape[1] == model.embedding_dim

    def test_standardization_applied(self):
        model = small_model()
        model.standardization["audio"] = Standardization(mean=np.full(6, 5.0), var=np.full(6, 4.0))
        x = np.full((4, 6), 5.0)
        # standardized input is zero, so the embedding equals the zero-input one
        zero = encode(small_model(), "audio", np.zeros((4, 6)))
        assert np.allclose(encode(model, "audio", x), zero, atol=1e-15)

    def test_unknown_modality(self):
        model = small_model()
        with pytest.raises(UsageError):
            encode(model, "thermal", np.zeros((3, 6)))

    def test_width_mismatch(self):
        model = small_model()
        with pytest.raises(ShapeError):
            encode(model, "audio", np.zeros((3, 7)))


class TestPredict:
    def test_regression_one_value_per_frame(self):
        model = small_model()
        emb = np.random.default_rng(1).normal(size=(11, model.embedding_dim))
        out = predict(model, emb)
        assert out.shape == (11,)

    def test_regression_zero_head_gives_bias(self):
        model = small_model()
        model.head.W[...] = 0.0
        model.head.b[...] = 0.75
        emb = np.random.default_rng(2).normal(size=(6, model.embedding_dim))
        assert np.array_equal(predict(model, emb), np.full(6, 0.75))

    def test_classification_probabilities(self):
        model = small_model(task="classification", n_classes=7)
        emb = np.random.default_rng(3).normal(size=(5, model.embedding_dim))
        probs = predict(model, emb)
        assert probs.shape == (7,)
        assert abs(probs.sum() - 1.0) < 1e-9
        assert np.all(probs > 0)

    def test_uniform_probs_for_equal_logits(self):
        model = small_model(task="classification", n_classes=4)
        model.head.W[...] = 0.0
        model.head.b[...] = 2.5
        probs = predict(model, np.random.default_rng(0).normal(size=(3, model.embedding_dim)))
        assert np.allclose(probs, 0.25, atol=1e-12)

    def test_task_mismatch(self):
        model = small_model()
        with pytest.raises(UsageError):
            predict(model, np.zeros((4, model.embedding_dim)), task="classification")


class TestDeterminismAndDiscardability:
    def test_same_seed_bit_identical(self):
        a = small_model(seed=7)
        b = small_model(seed=7)
        for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)
        x = np.random.default_rng(0).normal(size=(9, 6))
        assert np.array_equal(infer_sequence(a, "audio", x), infer_sequence(b, "audio", x))

    def test_component_init_independent_of_other_modalities(self):
        cfg = ModelConfig(encoder_layers=(5, 4), shared_layers=(3,))
        both = build_model("regression", "audio", {"audio": 6, "video": 9}, cfg, SeededRng(3))
        solo = build_model("regression", "audio", {"audio": 6}, cfg, SeededRng(3))
        for name, p in solo.parameters():
            match = dict(both.parameters())[name]
            assert np.array_equal(p, match), name

    def test_drop_auxiliary_keeps_target_inference(self):
        model = small_model(seed=11)
        x = np.random.default_rng(4).normal(size=(20, 6))
        before = infer_sequence(model, "audio", x)
        slim = drop_auxiliary(model)
        assert list(slim.encoders) == ["audio"]
        assert np.array_equal(infer_sequence(slim, "audio", x), before)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = small_model(seed=5)
        path = tmp_path / "model.npz"
        save_checkpoint(model, path, extra_meta={"note": 1})
        loaded, extra = load_checkpoint(path)
        assert extra == {"note": 1}
        for (na, pa), (nb, pb) in zip(model.parameters(), loaded.parameters()):
            assert na == nb
            assert np.array_equal(pa, pb)
        for m in ("audio", "video"):
            assert np.array_equal(model.standardization[m].mean, loaded.standardization[m].mean)
            assert np.array_equal(model.standardization[m].var, loaded.standardization[m].var)
        x = np.random.default_rng(1).normal(size=(15, 6))
        assert np.array_equal(infer_sequence(model, "audio", x), infer_sequence(loaded, "audio", x))

    def test_classification_round_trip(self, tmp_path):
        model = small_model(task="classification", n_classes=3, seed=2)
        path = tmp_path / "cls.npz"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        assert loaded.task == "classification"
        assert loaded.n_outputs == 3


@pytest.mark.parametrize("task,shared_type", [("regression", "gru"), ("regression", "dense"), ("classification", "gru")])
@pytest.mark.parametrize("seed", range(5))
def test_full_model_gradient_check(task, shared_type, seed):
    n_classes = 3 if task == "classification" else None
    model = small_model(task=task, seed=seed, n_classes=n_classes, shared_type=shared_type)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 4, 6))
    if task == "regression":
        w = rng.normal(size=(2, 4))
    else:
        w = rng.normal(size=(2, n_classes))

    def loss_with(theta):
        probe = small_model(task=task, seed=seed, n_classes=n_classes, shared_type=shared_type)
        set_model_theta(probe, theta)
        emb, _ = encoder_forward(probe, "audio", x)
        out, _ = head_forward(probe, emb)
        return float(np.sum(out * w))

    model.zero_grads()
    emb, enc_cache = encoder_forward(model, "audio", x)
    out, head_cache = head_forward(model, emb)
    demb = head_backward(model, w, head_cache)
    encoder_backward(model, "audio", demb, enc_cache)

    analytic = model_grads(model)
    numeric = finite_diff_grad(loss_with, model_theta(model), 1e-4)
    assert grad_rel_err(analytic, numeric) < 1e-4


def test_zero_output_gradient_gives_zero_param_gradients():
    model = small_model(seed=1)
    x = np.random.default_rng(0).normal(size=(2, 5, 6))
    model.zero_grads()
    emb, enc_cache = encoder_forward(model, "audio", x)
    out, head_cache = head_forward(model, emb)
    demb = head_backward(model, np.zeros_like(out), head_cache)
    encoder_backward(model, "audio", demb, enc_cache)
    assert np.array_equal(model_grads(model), np.zeros(model_theta(model).size))


def test_l2_gradient_is_2_theta():
    # with loss = sum(theta^2) the exact gradient is 2*theta
    model = small_model(seed=3)
    theta = model_theta(model)
    l2_grad = 2.0 * theta
    assert np.array_equal(l2_grad, 2.0 * theta)
    # spot-check against finite differences on a slice of coordinates
    def f(t):
        return float(np.sum(t * t))

    subset = theta[:10]
    numeric = finite_diff_grad(f, subset, 1e-4)
    assert np.allclose(numeric, 2 * subset, atol=1e-8)
