import numpy as np
import pytest

from conftest import numeric_grad, rel_err
from nets import freeze_dropout
from rtrecon.enhancer import FULL_SCALE, NetworkConfig, UNet, parameter_count
from rtrecon.enhancer.weights import decode_weights, encode_weights, load_weights, save_weights
from rtrecon.errors import FormatError, TruncatedPayloadError, ValidationError


def hand_count(depth, base, c_in, shortcut):
    # 3x3 convs with bias; each block = 2 convs + 2 x (BN gamma, beta, PReLU slope)
    conv = lambda ci, co, k=3: ci * co * k * k + co  # noqa: E731
    block = lambda ci, co: conv(ci, co) + conv(co, co) + 6 * co  # noqa: E731
    f = [base * 2 ** i for i in range(depth)]
    n = block(c_in, f[0]) + sum(block(f[i - 1], f[i]) for i in range(1, depth))
    n += block(f[-1], f[-1])
    n += sum(conv(f[i + 1], f[i]) + block(2 * f[i], f[i]) for i in range(depth - 1))
    n += conv(base, 1, 1)
    return n + (conv(c_in, 1, 1) if shortcut else 0)


def test_full_scale_parameter_count():
    assert parameter_count(FULL_SCALE) == 13_361_732 == hand_count(5, 32, 2, True)
    plain = NetworkConfig(5, 32, 0.05, 2, input_shortcut=False)
    assert parameter_count(plain) == 13_361_729
    for cfg in [NetworkConfig(2, 4), NetworkConfig(3, 8, input_channels=3, input_shortcut=False)]:
        assert UNet(cfg).n_parameters() == parameter_count(cfg)
        assert parameter_count(cfg) == hand_count(cfg.depth, cfg.base_filters,
                                                  cfg.input_channels, cfg.input_shortcut)


def test_shape_contract_and_eval_determinism(rng):
    net = UNet(NetworkConfig(3, 8, 0.05, 2))
    x = rng.random((2, 2, 64, 48))
    net.set_training(True)
    assert net.forward(x).shape == (2, 1, 64, 48)
    a = net.predict(x)
    b = net.predict(x)
    assert a.shape == (2, 64, 48) and np.array_equal(a, b)


def test_divisibility_rejected(rng):
    net = UNet(NetworkConfig(3, 4, 0.0, 1))
    with pytest.raises(ValidationError):
        net.forward(rng.random((2, 1, 62, 48)))
    with pytest.raises(ValidationError):
        net.forward(rng.random((2, 2, 64, 48)))


@pytest.mark.parametrize("shortcut", [False, True])
def test_tiny_network_gradient(shortcut):
    rng = np.random.default_rng(5)
    net = UNet(NetworkConfig(2, 2, 0.05, 2, input_shortcut=shortcut, seed=3))
    if shortcut:
        # give the zero-initialized head some weight so the body is exercised
        net.head.params["weight"][:] = rng.standard_normal(net.head.params["weight"].shape)
    net.set_training(True)
    x = rng.standard_normal((2, 2, 8, 8))

    def f(v):
        freeze_dropout(net)
        return float(np.sum(net.forward(v)))

    freeze_dropout(net)
    net.zero_grad_all()
    y = net.forward(x)
    dx = net.backward(np.ones_like(y))
    assert rel_err(dx, numeric_grad(f, x)) < 1e-3
    grads = net.gradients()
    params = net.parameters()
    for name in ["enc0.conv1.weight", "bottleneck.block.conv2.weight", "dec0.nad2.act.slope",
                 "upconv0.weight", "head.weight"]:
        p = params[name]
        idx = [np.unravel_index(i, p.shape) for i in range(min(6, p.size))]
        num = []
        for i in idx:
            old = p[i]
            p[i] = old + 1e-5
            fp = f(x)
            p[i] = old - 1e-5
            fm = f(x)
            p[i] = old
            num.append((fp - fm) / 2e-5)
        an = [grads[name][i] for i in idx]
        assert rel_err(an, num, floor=1e-6) < 1e-3, name


def test_config_round_trip():
    cfg = NetworkConfig(4, 6, 0.125, 3, input_shortcut=False, seed=11)
    assert NetworkConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        NetworkConfig(depth=0)


def test_weights_round_trip(tmp_path, rng):
    net = UNet(NetworkConfig(2, 4, 0.05, 2, seed=2), dtype=np.float32)
    net.set_training(True)
    net.forward(rng.random((3, 2, 16, 16)).astype(np.float32))  # move running stats
    path = tmp_path / "w.bin"
    save_weights(net, path, {"config_hash": "abc"})
    net2, meta = load_weights(path)
    assert meta == {"config_hash": "abc"} and net2.config == net.config
    for k, v in net.state().items():
        assert np.array_equal(v, net2.state()[k]), k
    assert encode_weights(net2, meta) == path.read_bytes()
    raw = path.read_bytes()
    with pytest.raises(TruncatedPayloadError):
        decode_weights(raw[:-8])
    with pytest.raises(FormatError):
        decode_weights(b"garbage\nEND\n")
