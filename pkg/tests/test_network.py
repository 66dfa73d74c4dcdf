import math

import numpy as np
import pytest

from fedledger.errors import ConfigError, NumericError, ShapeError
from fedledger.features import FeatureLayout
from fedledger.network import (
    ArchitectureSpec,
    backward,
    batch_loss,
    deep_architecture,
    forward,
    init_model,
    make_architecture,
    reconstruction_loss,
    row_losses,
    shallow_architecture,
)
from fedledger.params import ParamVector, load_params, save_params

from conftest import random_rows


# ---------------------------------------------------------------------------
# architecture and initialisation


def test_shallow_widths_include_input():
    spec = shallow_architecture(128)
    assert spec.encoder_widths == (128, 128, 64, 32, 16, 8, 4, 2)
    assert spec.decoder_widths == (2, 4, 8, 16, 32, 64, 128, 128)
    assert spec.bottleneck_dim == 2


def test_deep_widths():
    spec = deep_architecture(100)
    assert spec.encoder_widths[:3] == (100, 2048, 1024)
    assert spec.encoder_widths[-1] == 2
    assert spec.decoder_widths == tuple(reversed(spec.encoder_widths))


def test_mismatched_decoder_rejected():
    with pytest.raises(ConfigError):
        ArchitectureSpec((10, 4, 2), (2, 5, 10))


def test_param_count_hand_tally():
    # (10*4+4) + (4*2+2) + (2*4+4) + (4*10+10), counted by hand
    spec = ArchitectureSpec((10, 4, 2), (2, 4, 10))
    expected = (10 * 4 + 4) + (4 * 2 + 2) + (2 * 4 + 4) + (4 * 10 + 10)
    assert expected == 116
    assert spec.param_count == 116
    assert len(init_model(spec, 0)) == 116


def test_init_deterministic_and_seed_sensitive():
    spec = ArchitectureSpec((6, 3, 2), (2, 3, 6))
    a = init_model(spec, 42)
    b = init_model(spec, 42)
    c = init_model(spec, 43)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_init_biases_zero_weights_bounded():
    spec = ArchitectureSpec((8, 4, 2), (2, 4, 8))
    pv = init_model(spec, 1)
    for i, (rows, cols) in enumerate(spec.layer_shapes):
        w, b = pv.layer(i)
        assert np.all(b == 0.0)
        bound = math.sqrt(6.0 / (rows + cols))
        assert np.all(np.abs(w) <= bound)


# ---------------------------------------------------------------------------
# forward pass


def test_forward_zero_weights_gives_zero_output(tiny_spec):
    pv = ParamVector(np.zeros(tiny_spec.param_count), tiny_spec.layer_shapes)
    out = forward(pv, tiny_spec, np.ones((4, 3)))
    assert np.all(out == 0.0)  # tanh(0) at every stage


def test_forward_identity_like_hand_calc():
    # single-layer encoder and decoder with identity weights: both layers
    # are Tanh (bottleneck and final), so output = tanh(tanh(x)).
    spec = ArchitectureSpec((2, 2), (2, 2))
    values = np.concatenate(
        [np.eye(2).ravel(), np.zeros(2), np.eye(2).ravel(), np.zeros(2)]
    )
    pv = ParamVector(values, spec.layer_shapes)
    x = np.array([0.3, -0.2])
    out = forward(pv, spec, x)
    expected = [math.tanh(math.tanh(0.3)), math.tanh(math.tanh(-0.2))]
    assert out == pytest.approx(expected, abs=1e-15)


def test_forward_output_strictly_inside_unit_interval(tiny_spec, tiny_model):
    rng = np.random.default_rng(0)
    out = forward(tiny_model, tiny_spec, rng.uniform(-3, 3, size=(50, 3)))
    assert np.all(out > -1.0) and np.all(out < 1.0)
    assert out.shape == (50, 3)


def test_forward_width_mismatch(tiny_spec, tiny_model):
    with pytest.raises(ShapeError):
        forward(tiny_model, tiny_spec, np.zeros((2, 5)))


# ---------------------------------------------------------------------------
# loss


def test_loss_fixture_binary_attribute_plus_numeric(tiny_layout):
    # categorical target (1, 0) with mapped prediction (0.8, 0.2);
    # numeric target 0.5 predicted 0.3; mixing weight 2/3.
    target = np.array([1.0, 0.0, 0.5])
    output = np.array([2 * 0.8 - 1.0, 2 * 0.2 - 1.0, 0.3])
    loss = reconstruction_loss(tiny_layout, target, output, theta_mix=2.0 / 3.0)
    expected_bce = -(math.log(0.8) + math.log(0.8)) / 2.0
    assert loss.bce_part == pytest.approx(expected_bce, abs=1e-12)
    assert loss.mse_part == pytest.approx(0.04, abs=1e-12)
    assert loss.total == pytest.approx(0.1620957, abs=1e-5)


def test_loss_decomposition_exact(tiny_layout, tiny_spec, tiny_model):
    rng = np.random.default_rng(3)
    rows = random_rows(tiny_layout, 17, rng)
    for theta in (0.0, 0.25, 2.0 / 3.0, 1.0):
        loss = batch_loss(tiny_model, tiny_spec, tiny_layout, rows, theta)
        assert loss.total == theta * loss.bce_part + (1 - theta) * loss.mse_part


def test_loss_at_saturated_one_hot_reconstruction():
    layout = FeatureLayout(cat_segments=((0, 3), (3, 5)), num_slots=(), width=5)
    target = np.array([1.0, 0.0, 0.0, 0.0, 1.0])
    output = 2.0 * target - 1.0  # exact and saturated
    loss = reconstruction_loss(layout, target, output, theta_mix=1.0)
    bound = layout.n_categorical * -math.log(1.0 - 1e-6)
    assert 0.0 <= loss.total <= bound


def test_loss_nonnegative_and_zero_floor(tiny_layout):
    rng = np.random.default_rng(11)
    rows = random_rows(tiny_layout, 30, rng)
    outs = rng.uniform(-0.999, 0.999, size=rows.shape)
    losses = row_losses(tiny_layout, rows, outs, theta_mix=2.0 / 3.0)
    assert np.all(losses >= 0.0)


def test_loss_rejects_non_finite(tiny_layout):
    bad = np.array([0.1, -0.1, np.nan])
    with pytest.raises(NumericError):
        reconstruction_loss(tiny_layout, np.array([1.0, 0.0, 0.5]), bad, 0.5)


def test_pure_mixing_weights(tiny_layout):
    target = np.array([1.0, 0.0, 0.5])
    output = np.array([0.6, -0.6, 0.3])
    only_bce = reconstruction_loss(tiny_layout, target, output, theta_mix=1.0)
    only_mse = reconstruction_loss(tiny_layout, target, output, theta_mix=0.0)
    assert only_bce.total == only_bce.bce_part
    assert only_mse.total == only_mse.mse_part


# ---------------------------------------------------------------------------
# backward: finite-difference oracle


def finite_difference_grad(params, spec, layout, rows, theta, h=1e-4):
    grad = np.zeros(len(params))
    base = params.values
    for j in range(len(params)):
        bumped = base.copy()
        bumped[j] = base[j] + h
        up = batch_loss(params.with_values(bumped), spec, layout, rows, theta).total
        bumped[j] = base[j] - h
        down = batch_loss(params.with_values(bumped), spec, layout, rows, theta).total
        grad[j] = (up - down) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-4):
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    gap = np.abs(analytic - numeric)
    meaningful = scale > 1e-6
    assert np.all(gap[meaningful] / scale[meaningful] < rel)
    # for near-zero coordinates the same bound, taken at magnitude 1e-6
    assert np.all(gap[~meaningful] < rel * 1e-6)


def test_backward_matches_finite_differences(tiny_layout, tiny_spec):
    rng = np.random.default_rng(5)
    for seed in range(3):
        params = init_model(tiny_spec, seed)
        rows = random_rows(tiny_layout, 6, rng)
        analytic, _ = backward(params, tiny_spec, tiny_layout, rows, 2.0 / 3.0)
        numeric = finite_difference_grad(params, tiny_spec, tiny_layout, rows, 2.0 / 3.0)
        assert_grad_close(analytic.values, numeric)


def test_backward_batch_gradient_is_mean_of_row_gradients(tiny_layout, tiny_spec, tiny_model):
    rng = np.random.default_rng(9)
    rows = random_rows(tiny_layout, 2, rng)
    both, _ = backward(tiny_model, tiny_spec, tiny_layout, rows, 0.5)
    first, _ = backward(tiny_model, tiny_spec, tiny_layout, rows[:1], 0.5)
    second, _ = backward(tiny_model, tiny_spec, tiny_layout, rows[1:], 0.5)
    stacked = 0.5 * (first.values + second.values)
    assert both.values == pytest.approx(stacked, rel=1e-12, abs=1e-15)


def test_make_architecture_names():
    assert make_architecture("shallow", 10).encoder_widths[1] == 128
    assert make_architecture("deep", 10).encoder_widths[1] == 2048
    with pytest.raises(ConfigError):
        make_architecture("wide", 10)


# ---------------------------------------------------------------------------
# serialization


def test_params_round_trip_bit_exact(tmp_path, tiny_model):
    path = tmp_path / "model.flae"
    save_params(tiny_model, path)
    loaded = load_params(path)
    assert loaded.shapes == tiny_model.shapes
    assert np.array_equal(loaded.values, tiny_model.values)
    assert loaded.values.dtype == np.float64


def test_params_container_header(tmp_path, tiny_model):
    path = tmp_path / "model.flae"
    save_params(tiny_model, path)
    blob = path.read_bytes()
    assert blob[:4] == b"FLAE"
    n_layers = int.from_bytes(blob[8:12], "little")
    assert n_layers == len(tiny_model.shapes)


def test_params_bad_magic_rejected(tmp_path, tiny_model):
    path = tmp_path / "model.flae"
    save_params(tiny_model, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    from fedledger.errors import DataError

    with pytest.raises(DataError):
        load_params(path)
