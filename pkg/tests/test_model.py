import struct

import numpy as np
import pytest
from conftest import identity_net, random_net
from hypothesis import given, settings
from hypothesis import strategies as st

from strattack.data import synthetic_blobs
from strattack.errors import DataError, DimensionError, FormatError, ParamError
from strattack.grouping import Dims
from strattack.model import (
    Layer,
    LossParams,
    ReferenceNet,
    attack_loss,
    attack_loss_and_grad,
    attack_loss_grad,
    classify,
    load_weights,
    logits,
    save_weights,
    scale_logits,
    train_reference,
)


def vec(*values):
    return np.array(values, dtype=np.float64).reshape(1, -1, 1)


def test_single_linear_layer_logits():
    net = ReferenceNet([Layer([[1.0, 0.0], [0.0, 2.0]], [0.0, 1.0], "identity")], Dims(2, 1))
    assert logits(net, vec(1, 1)).tolist() == [1.0, 3.0]


@pytest.mark.parametrize("z,expected", [((1, 3, 2), 1), ((2, 2, 0), 0)])
def test_classify_and_tie_break(z, expected):
    assert classify(identity_net(3), vec(*z)) == expected


def test_classify_identity_two_pixels():
    assert classify(identity_net(2), vec(0.1, 0.9)) == 1


def test_input_shape_checked():
    with pytest.raises(DimensionError):
        logits(identity_net(3), np.zeros((1, 2, 1)))


@pytest.mark.parametrize(
    "z,kappa,c,expected",
    [((1, 3, 2), 0.0, 1.0, 2.0), ((5, 1, 1), 0.0, 1.0, 0.0), ((5, 1, 1), 2.0, 0.5, -1.0)],
)
def test_attack_loss_examples(z, kappa, c, expected):
    net = identity_net(3)
    loss = attack_loss(net, vec(*z), np.zeros((1, 3, 1)), LossParams(0, kappa, c))
    assert loss == pytest.approx(expected)


def test_gradient_zero_below_clamp():
    net = identity_net(3)
    g = attack_loss_grad(net, vec(5, 1, 1), np.zeros((1, 3, 1)), LossParams(0, 2.0, 1.0))
    assert np.all(g == 0)


def test_identity_gradient_by_hand():
    net = identity_net(2)
    g = attack_loss_grad(net, vec(0, 1), np.zeros((1, 2, 1)), LossParams(0, 0.0, 1.0))
    assert g.reshape(-1).tolist() == [-1.0, 1.0]


def test_kink_uses_margin_branch_and_lowest_competitor():
    net = identity_net(3)
    # margin exactly -kappa: gradient still flows; classes 1 and 2 tie
    _, g = attack_loss_and_grad(net, vec(3, 1, 1), np.zeros((1, 3, 1)), LossParams(0, 2.0, 1.0))
    assert g.reshape(-1).tolist() == [-1.0, 1.0, 0.0]


def test_loss_params_validated():
    net = identity_net(3)
    with pytest.raises(ParamError):
        attack_loss(net, vec(1, 2, 3), np.zeros((1, 3, 1)), LossParams(3))
    with pytest.raises(ParamError):
        attack_loss(net, vec(1, 2, 3), np.zeros((1, 3, 1)), LossParams(0, c=0.0))


def central_difference(fun, x, h=1e-5):
    grad = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        grad[i] = (fun(x + e.reshape(x.shape)) - fun(x - e.reshape(x.shape))) / (2 * h)
    return grad.reshape(x.shape)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    dims = Dims(3, 3)
    net = random_net(dims, hidden=6, classes=4, seed=seed)
    x0 = rng.uniform(0, 1, dims.shape)
    delta = 0.1 * rng.standard_normal(dims.shape)
    params = LossParams(int(rng.integers(4)), kappa=0.0, c=0.7)
    z = net.logits(x0 + delta)
    top = np.sort(np.delete(z, params.target))[-2:]
    # skip draws within reach of a kink of the loss
    if abs(top[1] - top[0]) < 1e-3 or abs(top[1] - z[params.target]) < 1e-3:
        return
    pre = net.layers[0].weight @ (x0 + delta).reshape(-1) + net.layers[0].bias
    if np.min(np.abs(pre)) < 1e-3:
        return
    g = attack_loss_grad(net, x0, delta, params)
    fd = central_difference(lambda d: attack_loss(net, x0, d, params), delta)
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_logits_vjp_matches_jacobian(small_net):
    x = np.random.default_rng(0).uniform(size=(4, 4, 1))
    cot = np.array([0.3, -1.0, 2.0])
    fd = central_difference(lambda v: cot @ small_net.logits(v), x)
    np.testing.assert_allclose(small_net.logits_vjp(x, cot), fd, atol=1e-7)


def test_weights_round_trip(tmp_path, small_net):
    save_weights(small_net, tmp_path / "w.saw")
    loaded = load_weights(tmp_path / "w.saw", small_net.dims)
    for a, b in zip(small_net.layers, loaded.layers):
        assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
        assert a.activation == b.activation


def test_weights_truncated(tmp_path, small_net):
    save_weights(small_net, tmp_path / "w.saw")
    raw = open(tmp_path / "w.saw", "rb").read()
    open(tmp_path / "w.saw", "wb").write(raw[:-3])
    with pytest.raises(FormatError):
        load_weights(tmp_path / "w.saw")


def test_weights_bad_magic(tmp_path):
    open(tmp_path / "w.saw", "wb").write(b"NOPE" + bytes(8))
    with pytest.raises(FormatError):
        load_weights(tmp_path / "w.saw")


def test_weights_header_payload_mismatch(tmp_path):
    # two layers whose declared shapes do not chain
    blob = b"SAW1" + struct.pack("<I", 2)
    blob += struct.pack("<IIB", 3, 4, 1) + bytes(8 * 12) + bytes(8 * 3)
    blob += struct.pack("<IIB", 2, 5, 0) + bytes(8 * 10) + bytes(8 * 2)
    open(tmp_path / "w.saw", "wb").write(blob)
    with pytest.raises(FormatError):
        load_weights(tmp_path / "w.saw")


def test_weights_trailing_bytes(tmp_path, small_net):
    save_weights(small_net, tmp_path / "w.saw")
    with open(tmp_path / "w.saw", "ab") as f:
        f.write(b"\0")
    with pytest.raises(FormatError):
        load_weights(tmp_path / "w.saw")


def test_weights_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_weights(tmp_path / "absent.saw")


def test_training_separable_and_deterministic(tmp_path):
    data = synthetic_blobs(200, Dims(4, 4), seed=0)
    net, report = train_reference(data, [16, 8, 2], epochs=5, learning_rate=0.1, seed=3)
    assert report.train_accuracy >= 0.99
    again, _ = train_reference(data, [16, 8, 2], epochs=5, learning_rate=0.1, seed=3)
    save_weights(net, tmp_path / "a")
    save_weights(again, tmp_path / "b")
    assert open(tmp_path / "a", "rb").read() == open(tmp_path / "b", "rb").read()


def test_training_rejects_bad_layout():
    data = synthetic_blobs(10, Dims(4, 4), seed=0)
    with pytest.raises(DataError):
        train_reference(data, [15, 2], epochs=1)
    with pytest.raises(DataError):
        train_reference(data, [16, 1], epochs=1)


def test_scale_logits_keeps_predictions(small_net):
    scaled = scale_logits(small_net, 16.0)
    x = np.random.default_rng(1).uniform(size=(4, 4, 1))
    np.testing.assert_allclose(scaled.logits(x), 16.0 * small_net.logits(x))
    assert classify(scaled, x) == classify(small_net, x)
