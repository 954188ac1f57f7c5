import warnings

import numpy as np
import pytest

from pixel_transfer.autodiff import BatchNormWarning, Tensor, no_grad
from pixel_transfer.networks import (
    Converter,
    decode,
    discriminate_domain,
    discriminate_real_fake,
    encode,
    init_parameters,
    layer_specs,
)

# counted by hand, layer by layer: weights + biases (unnormalized layers) + gamma/beta
HAND_COUNTS = {
    "encoder": (3 * 128 * 25 + 128) + (128 * 256 * 25 + 2 * 256) + (256 * 512 * 25 + 2 * 512)
    + (512 * 1024 * 25 + 2 * 1024) + (1024 * 64 * 16 + 2 * 64),
    "decoder": (64 * 16384 + 2 * 1024) + (1024 * 512 * 25 + 2 * 512) + (512 * 256 * 25 + 2 * 256)
    + (256 * 128 * 25 + 2 * 128) + (128 * 3 * 25 + 3),
    "disc_rf": (3 * 128 * 25 + 128) + (128 * 256 * 25 + 2 * 256) + (256 * 512 * 25 + 2 * 512)
    + (512 * 1024 * 25 + 2 * 1024) + (1024 * 16 + 1),
    "disc_da": (6 * 128 * 25 + 128) + (128 * 256 * 25 + 2 * 256) + (256 * 512 * 25 + 2 * 512)
    + (512 * 1024 * 25 + 2 * 1024) + (1024 * 16 + 1),
}
PINNED_COUNTS = {"encoder": 18265216, "decoder": 18265219, "disc_rf": 17232897, "disc_da": 17242497}


@pytest.fixture(scope="module")
def full_width():
    return {k: init_parameters(k, 1.0, seed=0) for k in PINNED_COUNTS}


def _batch(n=2, seed=0, channels=3):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, (n, channels, 64, 64)).astype(np.float32))


def test_parameter_counts(full_width):
    for net_id, net in full_width.items():
        assert net.parameter_count() == PINNED_COUNTS[net_id] == HAND_COUNTS[net_id]


def test_encoder_trace(full_width):
    trace = []
    code = encode(full_width["encoder"], _batch(), trace=trace)
    assert [s for _, s in trace] == [(2, 128, 32, 32), (2, 256, 16, 16), (2, 512, 8, 8), (2, 1024, 4, 4), (2, 64, 1, 1)]
    assert code.shape == (2, 64, 1, 1)


def test_decoder_trace(full_width):
    trace = []
    code = Tensor(np.random.default_rng(1).normal(size=(2, 64, 1, 1)).astype(np.float32))
    out = decode(full_width["decoder"], code, trace=trace)
    shapes = [s for _, s in trace]
    assert shapes == [(2, 16384, 1, 1), (2, 1024, 4, 4), (2, 512, 8, 8), (2, 256, 16, 16), (2, 128, 32, 32), (2, 3, 64, 64)]
    assert np.all(np.abs(out.data) < 1)


def test_discriminators(full_width):
    p = discriminate_real_fake(full_width["disc_rf"], _batch())
    assert p.shape == (2,) and np.all((p.data > 0) & (p.data < 1))
    assert full_width["disc_da"].specs[0].in_channels == 6
    q = discriminate_domain(full_width["disc_da"], _batch(4, 1), _batch(4, 2))
    assert q.shape == (4,) and np.all((q.data > 0) & (q.data < 1))


def test_domain_pair_order_matters():
    d = init_parameters("disc_da", 0.25, seed=0)
    a, b = _batch(2, 1), _batch(2, 2)
    assert not np.allclose(discriminate_domain(d, a, b).data, discriminate_domain(d, b, a).data)


def test_domain_batch_mismatch():
    d = init_parameters("disc_da", 0.25, seed=0)
    with pytest.raises(ValueError, match="batch size"):
        discriminate_domain(d, _batch(2), _batch(3))


def test_input_checks():
    with pytest.raises(ValueError):
        encode(init_parameters("encoder", 0.25), Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32)))
    with pytest.raises(ValueError):
        decode(init_parameters("decoder", 0.25), Tensor(np.zeros((1, 8, 1, 1), dtype=np.float32)))


def test_width_scaling():
    conv = Converter.create(0.25, seed=0)
    code = encode(conv.encoder, _batch())
    assert code.shape == (2, 16, 1, 1)
    assert [s.filters for s in layer_specs("encoder", 0.25)] == [32, 64, 128, 256, 16]


def test_init_statistics():
    w = np.concatenate([p.data.ravel() for k, p in init_parameters("encoder", 1.0, 0).parameters().items() if k.endswith("weight")])
    sample = w[:100_000]
    assert abs(sample.mean()) < 0.001
    assert abs(sample.std() - 0.02) < 0.002


def test_init_defaults_and_determinism():
    a, b = init_parameters("decoder", 0.25, seed=5), init_parameters("decoder", 0.25, seed=5)
    for (k, pa), pb in zip(a.parameters().items(), b.parameters().values()):
        np.testing.assert_array_equal(pa.data, pb.data)
        if k.endswith("bias") or k.endswith("beta"):
            assert not pa.data.any()
        if k.endswith("gamma"):
            assert np.all(pa.data == 1)
    for name, arr in a.buffers().items():
        assert np.all(arr == (1 if name.endswith("var") else 0))
    enc = init_parameters("encoder", 0.25, seed=5)
    assert not np.array_equal(enc.weights["conv2"].data, init_parameters("disc_rf", 0.25, seed=5).weights["conv2"].data)


def test_fresh_discriminator_near_half():
    inside = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BatchNormWarning)
        for seed in range(100):
            d = init_parameters("disc_rf", 0.25, seed)
            with no_grad():
                p = discriminate_real_fake(d, _batch(1, seed), training=False).item()
            inside += 0.2 < p < 0.8
    assert inside >= 95


def test_eval_batch_independence_and_purity():
    conv = Converter.create(0.125, seed=0)
    conv(_batch(4, 9), training=True)  # populate running stats
    x = _batch(2, 3)
    with no_grad():
        both = conv(x, training=False).data
        one = conv(Tensor(x.data[:1]), training=False).data
        two = conv(Tensor(x.data[1:]), training=False).data
        again = conv(x, training=False).data
    np.testing.assert_allclose(both, np.concatenate([one, two]), rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(both, again)


def test_zero_code_regression():
    dec = init_parameters("decoder", 0.125, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BatchNormWarning)
        out = decode(dec, Tensor(np.zeros((1, 8, 1, 1), dtype=np.float32)), training=False).data
    # zero code with zero biases and beta passes zeros all the way to tanh(bias) = 0
    assert np.all(out == 0)


def test_converter_gradients_reach_every_parameter():
    conv = Converter.create(0.125, seed=0)
    out = conv(_batch(2))
    (out * out).sum().backward()
    assert all(p.grad is not None and np.any(p.grad) for p in conv.parameters().values())
