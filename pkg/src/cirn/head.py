"""Three-way softmax classifier and its cross-entropy objective."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .data import LABELS
from .encoder import xavier_uniform
from .errors import DimensionError
from .tensor import Tensor

NUM_CLASSES = len(LABELS)


def init_head_params(width: int, rng: np.random.Generator) -> Dict[str, Tensor]:
    dtype = T.get_default_dtype()
    return {
        "head.weight": Tensor(xavier_uniform(rng, (NUM_CLASSES, width), width, NUM_CLASSES).astype(dtype),
                              requires_grad=True, name="head.weight"),
        "head.bias": Tensor(np.zeros(NUM_CLASSES, dtype=dtype), requires_grad=True, name="head.bias"),
    }


def logits(features: Tensor, params: Dict[str, Tensor], training: bool = False,
           dropout_rate: float = 0.0, rng: Optional[np.random.Generator] = None) -> Tensor:
    """``W·F + b`` for F of shape d' or B×d'."""
    w, b = params["head.weight"], params["head.bias"]
    if features.shape[-1] != w.shape[1]:
        raise DimensionError(f"head expects width {w.shape[1]}, got features {features.shape}")
    x = T.dropout(features, dropout_rate, training, rng)
    squeeze = x.ndim == 1
    if squeeze:
        x = T.reshape(x, (1, x.shape[0]))
    out = T.linear(x, T.transpose(w, (1, 0)), b)
    return T.reshape(out, (NUM_CLASSES,)) if squeeze else out


def classify(features: Tensor, params: Dict[str, Tensor], training: bool = False,
             dropout_rate: float = 0.0, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Class probabilities ``softmax(W·F + b)``."""
    return T.softmax_lastdim(logits(features, params, training, dropout_rate, rng))


def predict(p) -> np.ndarray:
    """Argmax over the last axis; ``np.argmax`` already breaks ties toward the lowest index."""
    arr = p.data if isinstance(p, Tensor) else np.asarray(p)
    return np.argmax(arr, axis=-1)


def cross_entropy(logit_values: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logit_values)``."""
    if logit_values.ndim == 1:
        logit_values = T.reshape(logit_values, (1, logit_values.shape[0]))
    return T.cross_entropy_logits(logit_values, np.atleast_1d(labels))
