"""Cross-sentence interaction tensors built from every encoder layer.

For each selected layer the sentence-1 and sentence-2 token states are
combined by element-wise product over all token pairs, and the per-layer
results are stacked on a trailing layer axis.  Cells that involve a padding
position are zeroed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .data import Batch, TokenizedPair
from .errors import ConfigError, DataError, DimensionError
from .tensor import Tensor

LAYER_SELECTIONS = ("all", "last_only")


@dataclass
class InteractionStack:
    """``values`` is [B×]n×m×d×L_used; ``pair_mask`` is [B×]n×m booleans."""

    values: Tensor
    pair_mask: np.ndarray
    layers_used: int


def split_pair(h: Tensor, pair: TokenizedPair) -> Tuple[Tensor, Tensor]:
    """Rows of an N'×d state belonging to sentence 1 and sentence 2 (specials excluded)."""
    if pair.n < 1 or pair.m < 1:
        raise DataError("split_pair: empty sentence range")
    if pair.s2_range.stop > h.shape[0]:
        raise DataError(f"split_pair: ranges exceed {h.shape[0]} rows")
    return (T.getitem(h, slice(pair.s1_range.start, pair.s1_range.stop)),
            T.getitem(h, slice(pair.s2_range.start, pair.s2_range.stop)))


def interaction_matrix(h1: Tensor, h2: Tensor) -> Tensor:
    """``I[..., i, j, :] = h1[..., i, :] * h2[..., j, :]`` for n×d and m×d (optionally batched)."""
    if h1.shape[-1] != h2.shape[-1] or h1.shape[:-2] != h2.shape[:-2]:
        raise DimensionError(f"interaction_matrix: widths/batches differ, {h1.shape} vs {h2.shape}")
    lead = h1.shape[:-2]
    n, d = h1.shape[-2:]
    m = h2.shape[-2]
    full = lead + (n, m, d)
    a = T.expand(T.reshape(h1, lead + (n, 1, d)), full)
    b = T.expand(T.reshape(h2, lead + (1, m, d)), full)
    return T.mul(a, b)


def _select(layers: Sequence[Tensor], layer_selection: str) -> list:
    if not layers:
        raise ConfigError("stack_interactions: no layers")
    if layer_selection == "all":
        return list(layers)
    if layer_selection == "last_only":
        return [layers[-1]]
    raise ConfigError(f"unknown layer selection {layer_selection!r}")


def sentence_index(batch: Batch) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gather indices for both sentences plus the n_max×m_max validity mask.

    Invalid slots point at position 0 ([CLS]) and are masked out.
    """
    n, m = np.asarray(batch.n), np.asarray(batch.m)
    n_max, m_max = int(n.max()), int(m.max())
    i = np.arange(n_max)[None, :]
    j = np.arange(m_max)[None, :]
    valid1 = i < n[:, None]
    valid2 = j < m[:, None]
    idx1 = np.where(valid1, 1 + i, 0)
    idx2 = np.where(valid2, n[:, None] + 2 + j, 0)
    return idx1, idx2, valid1[:, :, None] & valid2[:, None, :]


def _cell_mask(pair_mask: np.ndarray, values_shape, dtype) -> Tensor:
    full = np.broadcast_to(pair_mask[..., None, None], values_shape).astype(dtype)
    return Tensor(np.ascontiguousarray(full))


def stack_interactions(layers: Sequence[Tensor], source: Union[Batch, TokenizedPair],
                       layer_selection: str = "all") -> InteractionStack:
    """Stack per-layer interaction tensors along a trailing layer axis.

    ``source`` is either a :class:`Batch` (layer states B×N×d) or a single
    :class:`TokenizedPair` (layer states N'×d).
    """
    chosen = _select(layers, layer_selection)
    if isinstance(source, TokenizedPair):
        slices = [interaction_matrix(*split_pair(h, source)) for h in chosen]
        values = T.stack(slices, axis=-1)
        return InteractionStack(values, np.ones((source.n, source.m), dtype=bool), len(chosen))

    idx1, idx2, pair_mask = sentence_index(source)
    slices = [interaction_matrix(T.gather_positions(h, idx1), T.gather_positions(h, idx2))
              for h in chosen]
    values = T.stack(slices, axis=-1)
    values = T.mul(values, _cell_mask(pair_mask, values.shape, values.dtype))
    return InteractionStack(values, pair_mask, len(chosen))


def mask_interactions(stack: InteractionStack, batch: Batch) -> InteractionStack:
    """Zero every cell whose sentence-1 or sentence-2 position is padding."""
    _, _, pair_mask = sentence_index(batch)
    if pair_mask.shape != stack.values.shape[:3]:
        raise DimensionError(f"mask {pair_mask.shape} does not match stack {stack.values.shape}")
    values = T.mul(stack.values, _cell_mask(pair_mask, stack.values.shape, stack.values.dtype))
    return InteractionStack(values, pair_mask & stack.pair_mask, stack.layers_used)


def export_csv(stack: InteractionStack, path, example: int = 0) -> None:
    """Write one example's stack as rows ``(row, col, channel, layer, value)``."""
    vals = stack.values.data
    if vals.ndim == 5:
        vals = vals[example]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "channel", "layer", "value"])
        for (i, j, c, l), v in np.ndenumerate(vals):
            w.writerow([i, j, c, l, repr(float(v))])
