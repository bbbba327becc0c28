import numpy as np
import pytest

from xrdseg import ops
from xrdseg.errors import ConfigError, ShapeError
from xrdseg.optim import Adam
from xrdseg.tensor import Tensor, make_result
from xrdseg.unet import UNet, UNetConfig, build, count_parameters, predict_mask, round_half_up

from oracles import max_rel_error, numeric_grad, unet_parameter_count

PUBLISHED_COUNTS = {2: 6_562, 3: 29_650, 4: 121_394, 5: 487_154}


@pytest.mark.parametrize("depth", [2, 3, 4, 5])
def test_parameter_counts(depth):
    model = build(UNetConfig(depth=depth))
    assert count_parameters(model) == PUBLISHED_COUNTS[depth]
    assert unet_parameter_count(depth) == PUBLISHED_COUNTS[depth]


@pytest.mark.parametrize("depth,base,rate", [(3, 4, 1.5), (2, 5, 3.0), (4, 6, 1.7)])
def test_parameter_count_matches_closed_form_off_default(depth, base, rate):
    model = build(UNetConfig(depth=depth, base_channels=base, growth_rate=rate))
    assert count_parameters(model) == unet_parameter_count(depth, base, rate)


def test_round_half_up_channels():
    assert round_half_up(2.5) == 3
    assert round_half_up(3.5) == 4
    assert UNetConfig(depth=3, base_channels=5, growth_rate=1.5).channels == [5, 8, 11]


def test_non_increasing_channels_rejected():
    with pytest.raises(ConfigError):
        UNetConfig(depth=3, base_channels=1, growth_rate=1.2)


def test_depth_one_rejected():
    with pytest.raises(ConfigError):
        UNetConfig(depth=1)


@pytest.mark.parametrize("depth,size", [(2, 16), (3, 16), (4, 32)])
def test_forward_shape(depth, size):
    model = build(UNetConfig(depth=depth))
    out = model(np.zeros((2, 1, size, size), np.float32))
    assert out.shape == (2, 2, size, size)


def test_indivisible_tile_names_dimension():
    model = build(UNetConfig(depth=4))
    with pytest.raises(ShapeError) as e:
        model(np.zeros((1, 1, 16, 20), np.float32))
    assert e.value.dim == "W"
    with pytest.raises(ShapeError):
        build(UNetConfig(depth=4), tile_size=100)


def test_same_seed_same_weights():
    a, b = build(UNetConfig(seed=3)), build(UNetConfig(seed=3))
    c = build(UNetConfig(seed=4))
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


def test_initial_biases_zero_and_bn_identity():
    m = build(UNetConfig(depth=2))
    for k, t in m.params.items():
        if k.endswith(("bias", "beta")):
            assert not t.data.any()
        if k.endswith("gamma"):
            assert (t.data == 1).all()


def test_full_unet_gradient_float64():
    rng = np.random.default_rng(0)
    model = build(UNetConfig(depth=2, seed=1), dtype=np.float64)
    x = Tensor(rng.standard_normal((2, 1, 16, 16)), requires_grad=True, dtype=np.float64)
    y = rng.integers(0, 2, size=(2, 16, 16))
    bufs = {k: v.copy() for k, v in model.buffers.items()}

    def loss():
        for k, v in bufs.items():  # keep running stats from drifting across evaluations
            model.buffers[k][...] = v
        return ops.softmax_cross_entropy(model(x, training=True), y)

    loss().backward()
    for t in [x, *model.parameters()]:
        num = numeric_grad(lambda: loss().item(), t.data)
        assert max_rel_error(t.grad, num) < 1e-4


def test_predict_mask_tie_is_background():
    model = build(UNetConfig(depth=2))
    model.params["head.weight"].data[:] = 0
    model.params["head.bias"].data[:] = 0
    m = predict_mask(model, np.random.default_rng(0).random((16, 16)))
    assert m.shape == (16, 16) and m.dtype == np.uint8 and m.sum() == 0


def test_eval_forward_does_not_touch_running_stats():
    model = build(UNetConfig(depth=2))
    before = {k: v.copy() for k, v in model.buffers.items()}
    model.predict_logits(np.ones((1, 1, 16, 16)))
    for k in before:
        np.testing.assert_array_equal(before[k], model.buffers[k])


def test_state_roundtrip():
    a = build(UNetConfig(depth=3, seed=1))
    b = build(UNetConfig(depth=3, seed=2))
    b.load_state_arrays(a.state_arrays())
    x = np.random.default_rng(1).random((1, 1, 16, 16), dtype=np.float32)
    np.testing.assert_array_equal(a.predict_logits(x), b.predict_logits(x))


def test_overfits_a_single_tile():
    rng = np.random.default_rng(0)
    x = rng.random((2, 1, 16, 16)).astype(np.float32)
    y = (x[:, 0] > 0.8).astype(int)
    model = build(UNetConfig(depth=2, seed=0))
    opt = Adam(model.parameters(), lr=1e-2)
    first = None
    for _ in range(60):
        opt.zero_grad()
        loss = ops.softmax_cross_entropy(model(x, training=True), y)
        loss.backward()
        opt.step()
        first = first if first is not None else loss.item()
    assert loss.item() < 0.2 * first
