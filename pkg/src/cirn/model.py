"""The assembled network and its ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .data import Batch
from .encoder import EncoderConfig, encode_layers, init_encoder_params, xavier_uniform
from .errors import ConfigError
from .features import DenseNetConfig, extract_features, feature_width, fold_channels, init_feature_params
from .head import init_head_params, logits
from .interaction import stack_interactions
from .tensor import Tensor

ABLATIONS = ("none", "last_layer_only", "no_interaction", "no_densenet")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    densenet: DenseNetConfig = field(default_factory=DenseNetConfig)
    ablation: str = "none"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")

    @property
    def layers_used(self) -> int:
        return 1 if self.ablation == "last_layer_only" else self.encoder.layers

    @property
    def feature_width(self) -> int:
        """Width d' of the vector handed to the classifier."""
        if self.ablation == "no_interaction":
            return self.encoder.d * self.encoder.layers
        return feature_width(self.encoder.d, self.layers_used, self.densenet)

    def to_dict(self) -> dict:
        return {"encoder": asdict(self.encoder), "densenet": asdict(self.densenet), "ablation": self.ablation}

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(EncoderConfig(**obj["encoder"]), DenseNetConfig(**obj.get("densenet", {})),
                   obj.get("ablation", "none"))


class CIRN:
    """Encoder → per-layer interaction stack → DenseNet extractor → softmax head."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: Optional[Dict[str, Tensor]] = None):
        self.config = config
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params: Dict[str, Tensor] = params

    def _init_params(self, rng) -> Dict[str, Tensor]:
        cfg = self.config
        d = cfg.encoder.d
        params = init_encoder_params(cfg.encoder, rng)
        if cfg.ablation in ("none", "last_layer_only"):
            params.update(init_feature_params(d, cfg.layers_used, cfg.densenet, rng))
        elif cfg.ablation == "no_densenet":
            c = d * cfg.layers_used
            width = cfg.feature_width
            dtype = T.get_default_dtype()
            params["pool_proj.weight"] = Tensor(
                xavier_uniform(rng, (2 * c, width), 2 * c, width).astype(dtype), requires_grad=True)
            params["pool_proj.bias"] = Tensor(np.zeros(width, dtype=dtype), requires_grad=True)
        params.update(init_head_params(cfg.feature_width, rng))
        for name, p in params.items():
            p.name = name
        return params

    # parameter views ----------------------------------------------------------

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Dict[str, Tensor]:
        return self.params

    def weight_matrices(self) -> List[Tensor]:
        """Tensors subject to L2 decay: dense and convolution weights only."""
        return [p for name, p in self.params.items() if name.endswith(".weight")]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "CIRN":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    # forward ------------------------------------------------------------------

    def features(self, batch: Batch, training: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        cfg = self.config
        layers = encode_layers(batch, self.params, cfg.encoder, training, rng)
        if cfg.ablation == "no_interaction":
            cls_vectors = [T.getitem(h, (slice(None), 0, slice(None))) for h in layers]
            return T.concat(cls_vectors, axis=1)
        selection = "last_only" if cfg.ablation == "last_layer_only" else "all"
        stack = stack_interactions(layers, batch, selection)
        if cfg.ablation == "no_densenet":
            return self._pooled_projection(stack, training, rng)
        return extract_features(stack, self.params, cfg.densenet)

    def _pooled_projection(self, stack, training, rng) -> Tensor:
        x = fold_channels(stack)
        B, C, n, m = x.shape
        mask = stack.pair_mask
        neg = np.where(mask[:, None], 0.0, -np.inf).astype(x.dtype)
        mx = T.global_maxpool(T.add(x, Tensor(np.ascontiguousarray(np.broadcast_to(neg, x.shape)))))
        counts = mask.sum(axis=(1, 2)).astype(x.dtype)
        inv = np.broadcast_to((1.0 / counts)[:, None], (B, C)).astype(x.dtype)
        avg = T.mul(T.tsum(T.reshape(x, (B, C, n * m)), axis=2), Tensor(np.ascontiguousarray(inv)))
        pooled = T.concat([mx, avg], axis=1)
        pooled = T.dropout(pooled, self.config.encoder.dropout_rate, training, rng)
        return T.linear(pooled, self.params["pool_proj.weight"], self.params["pool_proj.bias"])

    def logits(self, batch: Batch, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        f = self.features(batch, training, rng)
        return logits(f, self.params, training, self.config.encoder.dropout_rate, rng)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        return T.softmax_lastdim(self.logits(batch)).data
