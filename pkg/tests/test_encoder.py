import numpy as np
import pytest

from cirn import tensor as T
from cirn.data import make_batch
from cirn.encoder import (EncoderConfig, attention_bias, encode_layers, init_encoder_params,
                          self_attention_layer)
from cirn.errors import ConfigError
from cirn.model import CIRN

from conftest import pair_from_lengths


def params_for(cfg, seed=0):
    return init_encoder_params(cfg, np.random.default_rng(seed))


class TestConfig:
    def test_heads_divide_width(self):
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=10, d=10, heads=4)

    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=10, activation="tanh")


class TestEncodeLayers:
    def test_returns_every_layer(self, ragged_batch):
        cfg = EncoderConfig(vocab_size=12, d=16, layers=3, heads=2, ffn_dim=32, max_positions=16)
        layers = encode_layers(ragged_batch, params_for(cfg), cfg)
        assert len(layers) == 3
        for h in layers:
            assert h.shape == (3, ragged_batch.seq_len, 16)
        assert not np.allclose(layers[0].data, layers[-1].data)

    def test_post_norm_rows_are_normalised(self, ragged_batch):
        cfg = EncoderConfig(vocab_size=12, d=16, layers=2, heads=2, ffn_dim=32, max_positions=16)
        h = encode_layers(ragged_batch, params_for(cfg), cfg)[-1].data
        np.testing.assert_allclose(h.mean(axis=-1), 0, atol=1e-5)

    def test_too_long_sequence(self, ragged_batch):
        cfg = EncoderConfig(vocab_size=12, d=16, layers=1, heads=2, ffn_dim=32, max_positions=4)
        with pytest.raises(IndexError):
            encode_layers(ragged_batch, params_for(cfg), cfg)

    def test_dropout_only_in_training(self, ragged_batch):
        cfg = EncoderConfig(vocab_size=12, d=16, layers=1, heads=2, ffn_dim=32, max_positions=16, dropout_rate=0.3)
        p = params_for(cfg)
        a = encode_layers(ragged_batch, p, cfg)[0].data
        b = encode_layers(ragged_batch, p, cfg)[0].data
        np.testing.assert_array_equal(a, b)
        c = encode_layers(ragged_batch, p, cfg, training=True, rng=np.random.default_rng(0))[0].data
        assert not np.allclose(a, c)

    def test_seeded_init_repeats(self):
        cfg = EncoderConfig(vocab_size=12, d=16, layers=1, heads=2, ffn_dim=32, max_positions=16)
        a, b = params_for(cfg, 4), params_for(cfg, 4)
        for name in a:
            assert a[name].data.tobytes() == b[name].data.tobytes()


class TestPadInvariance:
    def test_attention_bias_blocks_pad_keys(self):
        bias = attention_bias(np.array([[1, 1, 0]]), 2, np.float64).data
        assert bias.shape == (1, 2, 3, 3)
        assert np.all(bias[..., 2] == -np.inf) and np.all(bias[..., :2] == 0)

    def test_padding_does_not_change_real_positions(self, f64):
        rng = np.random.default_rng(5)
        short, long = pair_from_lengths(rng, 2, 2), pair_from_lengths(rng, 6, 5)
        cfg = EncoderConfig(vocab_size=12, d=16, layers=2, heads=2, ffn_dim=32, max_positions=16, dropout_rate=0)
        p = params_for(cfg)
        alone = encode_layers(make_batch([short]), p, cfg)
        padded = encode_layers(make_batch([short, long]), p, cfg)
        for a, b in zip(alone, padded):
            np.testing.assert_allclose(b.data[0, :short.length], a.data[0], atol=1e-5)

    def test_model_logits_ignore_padding(self, toy_config):
        rng = np.random.default_rng(6)
        short, long = pair_from_lengths(rng, 2, 3), pair_from_lengths(rng, 6, 6)
        model = CIRN(toy_config, seed=1)
        alone = model.logits(make_batch([short])).data[0]
        padded = model.logits(make_batch([short, long])).data[0]
        np.testing.assert_allclose(padded, alone, atol=1e-5)


def test_single_layer_is_post_norm(f64):
    cfg = EncoderConfig(vocab_size=12, d=8, layers=1, heads=2, ffn_dim=16, max_positions=8, dropout_rate=0)
    p = params_for(cfg)
    for suffix in ("ln2.gain", "ln1.gain"):
        p[f"encoder.layer0.{suffix}"].data[:] = 2.0
    h = T.tensor(np.random.default_rng(0).normal(size=(1, 4, 8)))
    out = self_attention_layer(h, np.ones((1, 4)), p, 0, cfg).data
    # final layer norm with gain 2 and bias 0 leaves each row with standard deviation ~2
    np.testing.assert_allclose(out.std(axis=-1), 2.0, rtol=1e-4)
