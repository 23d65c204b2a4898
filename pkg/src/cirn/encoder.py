"""Input embeddings and a post-norm Transformer stack that exposes every layer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .data import Batch
from .errors import ConfigError
from .tensor import Tensor

Params = Dict[str, Tensor]


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d: int = 32
    layers: int = 4
    heads: int = 4
    ffn_dim: int = 64
    max_positions: int = 128
    dropout_rate: float = 0.1
    eps: float = 1e-5
    activation: str = "relu"

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("encoder needs at least one layer")
        if self.d % self.heads:
            raise ConfigError(f"hidden width {self.d} not divisible by {self.heads} heads")
        if self.activation not in ("relu", "gelu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must be in [0, 1)")


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> Params:
    d, f = cfg.d, cfg.ffn_dim
    p: Dict[str, np.ndarray] = {
        "embed.token": rng.normal(0.0, 0.02, (cfg.vocab_size, d)),
        "embed.segment": rng.normal(0.0, 0.02, (2, d)),
        "embed.position": rng.normal(0.0, 0.02, (cfg.max_positions, d)),
    }
    for l in range(cfg.layers):
        pre = f"encoder.layer{l}"
        for proj in ("query", "key", "value", "output"):
            p[f"{pre}.attn.{proj}.weight"] = xavier_uniform(rng, (d, d), d, d)
            p[f"{pre}.attn.{proj}.bias"] = np.zeros(d)
        p[f"{pre}.ffn.in.weight"] = xavier_uniform(rng, (d, f), d, f)
        p[f"{pre}.ffn.in.bias"] = np.zeros(f)
        p[f"{pre}.ffn.out.weight"] = xavier_uniform(rng, (f, d), f, d)
        p[f"{pre}.ffn.out.bias"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            p[f"{pre}.{ln}.gain"] = np.ones(d)
            p[f"{pre}.{ln}.bias"] = np.zeros(d)
    dtype = T.get_default_dtype()
    return {k: Tensor(v.astype(dtype), requires_grad=True, name=k) for k, v in p.items()}


def embed_inputs(batch: Batch, params: Params, cfg: EncoderConfig, training: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    """Token + segment + position embeddings, shape B×N×d."""
    B, N = batch.token_ids.shape
    if N > params["embed.position"].shape[0]:
        raise IndexError(f"sequence length {N} exceeds max_positions {params['embed.position'].shape[0]}")
    tok = T.take_rows(params["embed.token"], batch.token_ids)
    seg = T.take_rows(params["embed.segment"], batch.segment_ids)
    pos = T.take_rows(params["embed.position"], np.broadcast_to(np.arange(N), (B, N)))
    x = T.add(T.add(tok, seg), pos)
    return T.dropout(x, cfg.dropout_rate, training, rng)


def attention_bias(mask: np.ndarray, heads: int, dtype) -> Tensor:
    """Additive key bias B×h×N×N: 0 for real keys, -inf for padding."""
    B, N = mask.shape
    bias = np.where(mask[:, None, None, :] > 0, 0.0, -np.inf).astype(dtype)
    return Tensor(np.ascontiguousarray(np.broadcast_to(bias, (B, heads, N, N))))


def multi_head_attention(h: Tensor, bias: Tensor, params: Params, prefix: str, cfg: EncoderConfig,
                         training: bool, rng) -> Tensor:
    B, N, d = h.shape
    nh, dh = cfg.heads, d // cfg.heads
    x = T.dropout(h, cfg.dropout_rate, training, rng)

    def heads_of(name):
        y = T.linear(x, params[f"{prefix}.{name}.weight"], params[f"{prefix}.{name}.bias"])
        return T.transpose(T.reshape(y, (B, N, nh, dh)), (0, 2, 1, 3))

    q, k, v = heads_of("query"), heads_of("key"), heads_of("value")
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    probs = T.softmax_lastdim(T.add(scores, bias))
    ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (B, N, d))
    ctx = T.dropout(ctx, cfg.dropout_rate, training, rng)
    return T.linear(ctx, params[f"{prefix}.output.weight"], params[f"{prefix}.output.bias"])


def feed_forward(h: Tensor, params: Params, prefix: str, cfg: EncoderConfig, training: bool, rng) -> Tensor:
    act = T.relu if cfg.activation == "relu" else T.gelu
    x = T.dropout(h, cfg.dropout_rate, training, rng)
    x = act(T.linear(x, params[f"{prefix}.in.weight"], params[f"{prefix}.in.bias"]))
    x = T.dropout(x, cfg.dropout_rate, training, rng)
    return T.linear(x, params[f"{prefix}.out.weight"], params[f"{prefix}.out.bias"])


def self_attention_layer(h: Tensor, mask: np.ndarray, params: Params, layer: int, cfg: EncoderConfig,
                         training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """One post-norm layer: ``LN(h + MHA(h))`` then ``LN(. + FFN(.))``."""
    pre = f"encoder.layer{layer}"
    bias = attention_bias(np.asarray(mask), cfg.heads, h.dtype)
    a = multi_head_attention(h, bias, params, f"{pre}.attn", cfg, training, rng)
    h1 = T.layer_norm(T.add(h, a), params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.bias"], cfg.eps)
    f = feed_forward(h1, params, f"{pre}.ffn", cfg, training, rng)
    return T.layer_norm(T.add(h1, f), params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.bias"], cfg.eps)


def encode_layers(batch: Batch, params: Params, cfg: EncoderConfig, training: bool = False,
                  rng: Optional[np.random.Generator] = None) -> List[Tensor]:
    """Return the outputs of all ``L`` layers, each B×N×d."""
    h = embed_inputs(batch, params, cfg, training, rng)
    outputs = []
    for l in range(cfg.layers):
        h = self_attention_layer(h, batch.attention_mask, params, l, cfg, training, rng)
        outputs.append(h)
    return outputs
