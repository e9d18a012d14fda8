import numpy as np
import pytest

from fsqnet.errors import ConfigError, ModelError, ShapeError, StateError
from fsqnet.model import (
    TINY_FIRES,
    V11_FIRES,
    FireSpec,
    Model,
    ModelConfig,
    build_model,
    expected_param_shapes,
    fire_forward,
    layer_summary,
    model_backward,
    model_forward,
    parameter_count,
    tiny_config,
)
from fsqnet.ops import ConvSpec, channel_concat, conv2d_forward, relu
from fsqnet.train import TrainConfig, cross_entropy, sgd_step
from oracles import closed_form_param_count


def _tiny_model(seed=7, num_classes=3):
    return build_model(tiny_config(num_classes=num_classes), seed)


def _batch(rng, n, size=32):
    return rng.standard_normal((n, 3, size, size)).astype(np.float32)


class TestFireSpec:
    def test_valid(self):
        spec = FireSpec(16, 64, 64)
        assert spec.out_channels == 128

    def test_squeeze_property_enforced(self):
        with pytest.raises(ConfigError):
            FireSpec(129, 64, 64)

    def test_positive_widths(self):
        with pytest.raises(ConfigError):
            FireSpec(0, 4, 4)


class TestModelConfig:
    def test_defaults(self):
        config = ModelConfig()
        assert config.num_classes == 24
        assert config.input_size == 244
        assert config.fire_specs == V11_FIRES

    def test_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(num_classes=1)
        with pytest.raises(ConfigError):
            ModelConfig(input_size=16)
        with pytest.raises(ConfigError):
            ModelConfig(fire_specs=())
        with pytest.raises(ConfigError):
            ModelConfig(dropout_rate=1.0)

    def test_dict_round_trip(self):
        config = tiny_config(num_classes=4, input_size=64)
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestLayerSummary:
    def test_shapes_chain(self):
        rows = layer_summary(ModelConfig())
        names = [r["name"] for r in rows]
        assert names[0] == "conv1" and names[-1] == "softmax"
        assert rows[0]["output_shape"] == [64, 121, 121]
        assert rows[1]["output_shape"] == [64, 60, 60]
        # spatial dims only ever shrink; channel changes happen at fires/dense
        spatial = [r["output_shape"][-1] for r in rows if len(r["output_shape"]) == 3]
        assert spatial == sorted(spatial, reverse=True)
        assert rows[-1]["output_shape"] == [24]

    def test_total_matches_closed_form(self):
        rows = layer_summary(ModelConfig())
        widths = [(f.squeeze_1x1, f.expand_1x1, f.expand_3x3) for f in V11_FIRES]
        assert sum(r["params"] for r in rows) == closed_form_param_count(24, widths, 512)

    def test_tiny_totals(self):
        rows = layer_summary(tiny_config())
        widths = [(2, 2, 2), (2, 2, 2)]
        assert sum(r["params"] for r in rows) == closed_form_param_count(3, widths, 32)

    def test_pool_rows_present(self):
        names = [r["name"] for r in layer_summary(ModelConfig())]
        assert names.count("pool1") == 1
        assert "pool2" in names and "pool3" in names
        tiny_names = [r["name"] for r in layer_summary(tiny_config())]
        assert "pool2" not in tiny_names  # only two fires, no mid-network pools


class TestFireForward:
    def test_matches_primitive_composition(self):
        rng = np.random.default_rng(0)
        spec = FireSpec(3, 4, 5)
        x = rng.standard_normal((2, 6, 5, 5)).astype(np.float32)
        params = {
            "f_squeeze/weight": rng.standard_normal((3, 6, 1, 1)).astype(np.float32),
            "f_squeeze/bias": rng.standard_normal(3).astype(np.float32),
            "f_expand1x1/weight": rng.standard_normal((4, 3, 1, 1)).astype(np.float32),
            "f_expand1x1/bias": rng.standard_normal(4).astype(np.float32),
            "f_expand3x3/weight": rng.standard_normal((5, 3, 3, 3)).astype(np.float32),
            "f_expand3x3/bias": rng.standard_normal(5).astype(np.float32),
        }
        out = fire_forward(x, spec, params, prefix="f")

        squeezed = relu(
            conv2d_forward(x, params["f_squeeze/weight"], params["f_squeeze/bias"],
                           ConvSpec(3, 6, 1, 1))
        )
        e1 = relu(
            conv2d_forward(squeezed, params["f_expand1x1/weight"], params["f_expand1x1/bias"],
                           ConvSpec(4, 3, 1, 1))
        )
        e3 = relu(
            conv2d_forward(squeezed, params["f_expand3x3/weight"], params["f_expand3x3/bias"],
                           ConvSpec(5, 3, 3, 3, pad=1))
        )
        assert np.array_equal(out, channel_concat(e1, e3))

    def test_output_shape(self):
        model = _tiny_model()
        x = np.random.default_rng(1).standard_normal((1, 64, 7, 7)).astype(np.float32)
        out = fire_forward(x, TINY_FIRES[0], model.params, prefix="fire1")
        assert out.shape == (1, 4, 7, 7)

    def test_missing_params(self):
        x = np.zeros((1, 3, 4, 4), np.float32)
        with pytest.raises(ModelError):
            fire_forward(x, FireSpec(2, 2, 2), {}, prefix="nope")


class TestBuildModel:
    def test_deterministic(self):
        a = _tiny_model(seed=5)
        b = _tiny_model(seed=5)
        assert a.param_names() == b.param_names()
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])

    def test_seed_changes_weights(self):
        a, b = _tiny_model(seed=1), _tiny_model(seed=2)
        assert not np.array_equal(a.params["conv1/weight"], b.params["conv1/weight"])

    def test_zero_biases_and_velocity(self):
        model = _tiny_model()
        for name, p in model.params.items():
            if name.endswith("/bias"):
                assert not p.any()
            assert not model.velocity[name].any()
            assert model.velocity[name].shape == p.shape

    def test_shapes_match_plan(self):
        model = _tiny_model()
        expected = expected_param_shapes(model.config)
        assert set(model.params) == set(expected)
        for name, shape in expected.items():
            assert model.params[name].shape == shape
            assert model.params[name].dtype == np.float32

    def test_param_count_tiny(self):
        assert parameter_count(_tiny_model()) == 2279

    def test_param_count_default(self):
        shapes = expected_param_shapes(ModelConfig())
        total = sum(int(np.prod(s)) for s in shapes.values())
        assert total == 997464


class TestModelForward:
    def test_probability_rows(self):
        model = _tiny_model()
        probs = model_forward(model, _batch(np.random.default_rng(0), 4))
        assert probs.shape == (4, 3)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_duplicated_rows_identical(self):
        model = _tiny_model()
        one = _batch(np.random.default_rng(1), 1)
        pair = np.concatenate([one, one])
        probs = model_forward(model, pair)
        assert np.array_equal(probs[0], probs[1])

    def test_pure_function(self):
        model = _tiny_model()
        x = _batch(np.random.default_rng(2), 2)
        assert np.array_equal(model_forward(model, x), model_forward(model, x))

    def test_wrong_input_size(self):
        model = _tiny_model()
        with pytest.raises(ShapeError):
            model_forward(model, np.zeros((1, 3, 16, 16), np.float32))
        with pytest.raises(ShapeError):
            model_forward(model, np.zeros((1, 1, 32, 32), np.float32))

    def test_dropout_only_with_seed(self):
        model = build_model(tiny_config(), 3)
        x = _batch(np.random.default_rng(3), 2)
        plain = model_forward(model, x, training=True)
        dropped = model_forward(model, x, training=True, dropout_seed=11)
        again = model_forward(model, x, training=True, dropout_seed=11)
        assert np.array_equal(plain, model_forward(model, x))
        assert not np.array_equal(plain, dropped)
        assert np.array_equal(dropped, again)


class TestModelBackward:
    def test_requires_training_forward(self):
        model = _tiny_model()
        model_forward(model, _batch(np.random.default_rng(4), 1))  # inference: no cache
        with pytest.raises(StateError):
            model_backward(model, np.zeros((1, 3), np.float32))

    def test_covers_every_parameter(self):
        model = _tiny_model()
        x = _batch(np.random.default_rng(5), 2)
        probs = model_forward(model, x, training=True)
        _, d_logits = cross_entropy(probs, [0, 1])
        grads = model_backward(model, d_logits)
        assert set(grads) == set(model.params)
        for name in grads:
            assert grads[name].shape == model.params[name].shape

    def test_deterministic(self):
        model = _tiny_model()
        x = _batch(np.random.default_rng(6), 2)
        d = np.full((2, 3), 0.1, np.float32)
        model_forward(model, x, training=True)
        first = model_backward(model, d)
        model_forward(model, x, training=True)
        second = model_backward(model, d)
        for name in first:
            assert np.array_equal(first[name], second[name])

    def test_count_invariant_under_steps(self):
        model = _tiny_model()
        before = parameter_count(model)
        x = _batch(np.random.default_rng(7), 2)
        probs = model_forward(model, x, training=True)
        _, d_logits = cross_entropy(probs, [0, 2])
        sgd_step(model, model_backward(model, d_logits), TrainConfig(learning_rate=0.01))
        assert parameter_count(model) == before
