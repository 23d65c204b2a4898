"""DenseNet-style feature extraction over the stacked interaction tensor.

The ``d × L_used`` feature axes of the stack are folded into channels of an
n×m spatial map (layer-major: channel ``l*d + k``).  A 1×1 convolution
reduces the channel count, then dense blocks and transition layers follow,
and a global max pool produces the feature vector.

Padding cells are re-zeroed after every convolution so that a padded example
yields the same features as the same example on its own.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .encoder import xavier_uniform
from .errors import ConfigError
from .interaction import InteractionStack
from .tensor import Tensor

Params = Dict[str, Tensor]


@dataclass(frozen=True)
class DenseNetConfig:
    eta: float = 0.3
    growth: int = 20
    layers_per_block: int = 8
    blocks: int = 2
    theta: float = 0.5
    kernel: int = 3

    def __post_init__(self):
        if not (0 < self.eta <= 1 and 0 < self.theta <= 1):
            raise ConfigError("eta and theta must lie in (0, 1]")
        if self.growth < 1 or self.layers_per_block < 1 or self.blocks < 1:
            raise ConfigError("growth, layers_per_block and blocks must be >= 1")
        if self.kernel % 2 == 0:
            raise ConfigError("dense-layer kernel must be odd")


def _floor(ratio: float, count: int) -> int:
    # guards against 0.3 * 130 = 38.99999...
    return int(np.floor(ratio * count + 1e-9))


def channel_plan(d: int, layers_used: int, cfg: DenseNetConfig) -> List[int]:
    """Channel counts at each stage: folded input, reduced, then per block/transition.

    With d=32, four layers and the default geometry this is
    ``[128, 38, 198, 99, 259]``.
    """
    c_in = d * layers_used
    c = _floor(cfg.eta, c_in)
    if c < 1:
        raise ConfigError(f"reduction of {c_in} channels by eta={cfg.eta} leaves none")
    plan = [c_in, c]
    for b in range(cfg.blocks):
        c = c + cfg.layers_per_block * cfg.growth
        plan.append(c)
        if b < cfg.blocks - 1:
            c = _floor(cfg.theta, c)
            if c < 1:
                raise ConfigError(f"transition {b} compresses to zero channels")
            plan.append(c)
    return plan


def feature_width(d: int, layers_used: int, cfg: DenseNetConfig) -> int:
    return channel_plan(d, layers_used, cfg)[-1]


def init_feature_params(d: int, layers_used: int, cfg: DenseNetConfig, rng: np.random.Generator) -> Params:
    plan = channel_plan(d, layers_used, cfg)
    k = cfg.kernel
    p = {}
    p["features.reduce.weight"] = xavier_uniform(rng, (plan[1], plan[0], 1, 1), plan[0], plan[1])
    p["features.reduce.bias"] = np.zeros(plan[1])
    c = plan[1]
    for b in range(cfg.blocks):
        for i in range(cfg.layers_per_block):
            c_in = c + i * cfg.growth
            p[f"features.block{b}.layer{i}.weight"] = xavier_uniform(
                rng, (cfg.growth, c_in, k, k), c_in * k * k, cfg.growth * k * k)
            p[f"features.block{b}.layer{i}.bias"] = np.zeros(cfg.growth)
        c = c + cfg.layers_per_block * cfg.growth
        if b < cfg.blocks - 1:
            c_out = _floor(cfg.theta, c)
            p[f"features.transition{b}.weight"] = xavier_uniform(rng, (c_out, c, 1, 1), c, c_out)
            p[f"features.transition{b}.bias"] = np.zeros(c_out)
            c = c_out
    dtype = T.get_default_dtype()
    return {name: Tensor(v.astype(dtype), requires_grad=True, name=name) for name, v in p.items()}


def _spatial_mask(mask: Optional[np.ndarray], x: Tensor) -> Optional[Tensor]:
    if mask is None:
        return None
    full = np.broadcast_to(mask[:, None, :, :], x.shape).astype(x.dtype)
    return Tensor(np.ascontiguousarray(full))


def _remask(x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    m = _spatial_mask(mask, x)
    return x if m is None else T.mul(x, m)


def fold_channels(stack: InteractionStack) -> Tensor:
    """B×n×m×d×L → B×(L·d)×n×m."""
    v = stack.values
    if v.ndim == 4:
        v = T.reshape(v, (1,) + v.shape)
    B, n, m, d, L = v.shape
    return T.reshape(T.transpose(v, (0, 4, 3, 1, 2)), (B, L * d, n, m))


def _batched_mask(stack: InteractionStack) -> np.ndarray:
    pm = stack.pair_mask
    return pm[None] if pm.ndim == 2 else pm


def reduce_channels(stack: InteractionStack, params: Params, cfg: DenseNetConfig) -> Tensor:
    """1×1 convolution of the folded stack down to ``floor(eta·d·L_used)`` channels, then ReLU."""
    x = fold_channels(stack)
    if _floor(cfg.eta, x.shape[1]) < 1:
        raise ConfigError(f"reduction of {x.shape[1]} channels by eta={cfg.eta} leaves none")
    y = T.relu(T.conv2d(x, params["features.reduce.weight"], params["features.reduce.bias"], "valid"))
    return _remask(y, _batched_mask(stack))


def dense_block(x: Tensor, params: Params, block: int, cfg: DenseNetConfig,
                mask: Optional[np.ndarray] = None) -> Tensor:
    """Each layer sees the concatenation of the block input and all earlier layer outputs."""
    features = [x]
    for i in range(cfg.layers_per_block):
        inp = features[0] if len(features) == 1 else T.concat(features, axis=1)
        z = T.relu(T.conv2d(inp, params[f"features.block{block}.layer{i}.weight"],
                            params[f"features.block{block}.layer{i}.bias"], "same"))
        features.append(_remask(z, mask))
    return T.concat(features, axis=1)


def transition_layer(x: Tensor, params: Params, index: int, cfg: DenseNetConfig,
                     mask: Optional[np.ndarray] = None):
    """1×1 compression by theta, ReLU, 2×2 max pool. Returns ``(output, pooled_mask)``."""
    y = T.relu(T.conv2d(x, params[f"features.transition{index}.weight"],
                        params[f"features.transition{index}.bias"], "valid"))
    y = _remask(y, mask)
    pooled = T.maxpool2d(y)
    if mask is None:
        return pooled, None
    B, H, W = mask.shape
    pm = np.zeros((B, 2 * (-(-H // 2)), 2 * (-(-W // 2))), dtype=bool)
    pm[:, :H, :W] = mask
    pm = pm.reshape(B, pm.shape[1] // 2, 2, pm.shape[2] // 2, 2).any(axis=(2, 4))
    return pooled, pm


def extract_features(stack: InteractionStack, params: Params, cfg: DenseNetConfig) -> Tensor:
    """Full extractor: reduce, B × (dense block, transition), global max pool → B×d'."""
    mask = _batched_mask(stack)
    x = reduce_channels(stack, params, cfg)
    for b in range(cfg.blocks):
        if min(x.shape[2:]) < 1:
            raise ConfigError(f"spatial extent vanished before dense block {b}")
        x = dense_block(x, params, b, cfg, mask)
        if b < cfg.blocks - 1:
            x, mask = transition_layer(x, params, b, cfg, mask)
    out = T.global_maxpool(x)
    return T.reshape(out, (out.shape[-1],)) if stack.values.ndim == 4 else out
