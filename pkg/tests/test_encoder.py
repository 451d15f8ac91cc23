import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordcon import autodiff as ad
from ordcon.autodiff import Tape
from ordcon.encoder import (EncoderSpec, RegressionHead, forward, init_encoder,
                            init_head, predict_age)
from ordcon.errors import ConfigError, ShapeMismatchError


def small_spec(**kw):
    base = dict(input_dim=3, hidden_dims=(5, 4), d_age=2, d_id=2,
                activation="tanh", seed=0)
    base.update(kw)
    return EncoderSpec(**base)


class TestEncoderSpec:
    def test_rejects_zero_dims(self):
        with pytest.raises(ConfigError):
            small_spec(input_dim=0)
        with pytest.raises(ConfigError):
            small_spec(d_age=0)
        with pytest.raises(ConfigError):
            small_spec(hidden_dims=(5, 0))

    def test_rejects_unknown_activation(self):
        with pytest.raises(ConfigError):
            small_spec(activation="softplus")

    def test_dict_round_trip(self):
        spec = small_spec()
        assert EncoderSpec.from_dict(spec.to_dict()) == spec

    def test_identity_head_flag(self):
        assert small_spec(d_id=2).has_identity_head
        assert not small_spec(d_id=0).has_identity_head


class TestInitEncoder:
    def test_same_seed_bit_identical(self):
        a = init_encoder(small_spec())
        b = init_encoder(small_spec())
        assert a.arrays.keys() == b.arrays.keys()
        for name in a.arrays:
            assert np.array_equal(a.arrays[name], b.arrays[name])

    def test_different_seed_differs(self):
        a = init_encoder(small_spec(seed=0))
        b = init_encoder(small_spec(seed=1))
        assert any(not np.array_equal(a.arrays[n], b.arrays[n]) for n in a.arrays)

    def test_layer_shapes(self):
        params = init_encoder(small_spec())
        assert params.arrays["w0"].shape == (3, 5)
        assert params.arrays["b0"].shape == (5,)
        assert params.arrays["w1"].shape == (5, 4)
        assert params.arrays["w_age"].shape == (4, 2)
        assert params.arrays["w_id"].shape == (4, 2)

    def test_no_identity_head_when_d_id_zero(self):
        params = init_encoder(small_spec(d_id=0))
        assert "w_id" not in params.arrays

    def test_empty_hidden_dims_is_single_linear_map(self):
        params = init_encoder(small_spec(hidden_dims=()))
        assert params.arrays["w_age"].shape == (3, 2)
        z_age, z_id = forward(params, np.ones((4, 3)))
        assert z_age.shape == (4, 2)
        assert np.allclose(z_age.value, np.ones((4, 3)) @ params.arrays["w_age"])


class TestForward:
    def test_zero_weights_zero_output(self):
        params = init_encoder(small_spec())
        for name in params.arrays:
            params.arrays[name][...] = 0.0
        z_age, z_id = forward(params, np.ones((3, 3)))
        assert np.array_equal(z_age.value, np.zeros((3, 2)))
        assert np.array_equal(z_id.value, np.zeros((3, 2)))

    def test_output_shapes_and_id_absent_in_age_mode(self, rng):
        params = init_encoder(small_spec(d_id=0))
        z_age, z_id = forward(params, rng.normal(size=(6, 3)))
        assert z_age.shape == (6, 2)
        assert z_id is None

    def test_deterministic(self, rng):
        params = init_encoder(small_spec())
        x = rng.normal(size=(4, 3))
        a, _ = forward(params, x)
        b, _ = forward(params, x)
        assert np.array_equal(a.value, b.value)

    def test_row_permutation_equivariance(self, rng):
        params = init_encoder(small_spec())
        x = rng.normal(size=(5, 3))
        perm = np.array([3, 0, 4, 2, 1])
        z, _ = forward(params, x)
        zp, _ = forward(params, x[perm])
        assert np.allclose(z.value[perm], zp.value, atol=1e-14)

    def test_input_dim_mismatch(self, rng):
        params = init_encoder(small_spec())
        with pytest.raises(ShapeMismatchError):
            forward(params, rng.normal(size=(4, 7)))

    def test_reversal_leaves_forward_values_unchanged(self, rng):
        params = init_encoder(small_spec())
        x = rng.normal(size=(4, 3))
        plain, _ = forward(params, x)
        reversed_, _ = forward(params, x, reversal_strength=0.9)
        assert np.array_equal(plain.value, reversed_.value)


class TestGradientReversalPath:
    def test_trunk_grads_scale_by_negative_strength(self, rng):
        # the age objective's gradient into trunk parameters must flip sign
        # and scale by the reversal strength; the head above the reversal
        # node keeps its plain gradient
        params = init_encoder(small_spec(d_id=0))
        x = rng.normal(size=(5, 3))
        strength = 0.6

        def grads(rev):
            tape = Tape()
            z_age, _ = forward(params, x, tape, reversal_strength=rev)
            loss = (z_age * z_age).sum()
            return params.group.grads_from(tape.backward(loss))

        plain = grads(None)
        flipped = grads(strength)
        for name in plain:
            if name == "w_age":
                assert np.allclose(flipped[name], plain[name], atol=1e-12)
            else:
                assert np.allclose(flipped[name], -strength * plain[name], atol=1e-12)

    def test_zero_strength_zeroes_trunk_grads(self, rng):
        params = init_encoder(small_spec(d_id=0))
        x = rng.normal(size=(4, 3))
        tape = Tape()
        z_age, _ = forward(params, x, tape, reversal_strength=0.0)
        grads = params.group.grads_from(tape.backward((z_age * z_age).sum()))
        assert np.allclose(grads["w0"], 0.0)
        assert not np.allclose(grads["w_age"], 0.0)


class TestPredictAge:
    def test_constant_head(self, rng):
        head = RegressionHead(np.zeros(4), 33.0)
        tape = Tape()
        z = tape.leaf(rng.normal(size=(5, 4)))
        preds = predict_age(head, z)
        assert np.allclose(preds.value, 33.0)

    def test_coordinate_projection(self):
        head = RegressionHead(np.array([1.0, 0.0, 0.0]), 0.0)
        tape = Tape()
        z = tape.leaf(np.array([[25.0, 7.0, -3.0]]))
        assert predict_age(head, z).value[0] == 25.0

    def test_gradient_wrt_weight_is_feature(self):
        head = RegressionHead(np.array([0.5, -0.5]), 1.0)
        tape = Tape()
        z = tape.leaf(np.array([[1.0, 2.0]]))
        preds = predict_age(head, z)
        leaves = head.group.on_tape(tape)
        grads = tape.backward(preds.sum())
        assert np.allclose(grads[leaves["weight"]], [1.0, 2.0])
        assert grads[leaves["bias"]] == pytest.approx(1.0)

    def test_dim_mismatch(self, rng):
        head = init_head(4, 0)
        tape = Tape()
        z = tape.leaf(rng.normal(size=(3, 5)))
        with pytest.raises(ShapeMismatchError):
            predict_age(head, z)

    def test_init_head_rejects_bad_dim(self):
        with pytest.raises(ConfigError):
            init_head(0, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_forward_permutation_property(seed):
    rng = np.random.default_rng(seed)
    params = init_encoder(small_spec(seed=seed % 100))
    x = rng.normal(size=(6, 3))
    perm = rng.permutation(6)
    z, _ = forward(params, x)
    zp, _ = forward(params, x[perm])
    assert np.allclose(z.value[perm], zp.value, atol=1e-13)
