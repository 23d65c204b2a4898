import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cirn import tensor as T
from cirn.data import make_batch
from cirn.errors import ConfigError, DimensionError
from cirn.interaction import (export_csv, interaction_matrix, mask_interactions, sentence_index, split_pair,
                              stack_interactions)
from cirn.tensor import Tensor

from conftest import pair_from_lengths


def random_layers(rng, N, d, L, batch=None):
    shape = (N, d) if batch is None else (batch, N, d)
    return [Tensor(rng.normal(size=shape)) for _ in range(L)]


class TestInteractionMatrix:
    def test_values(self):
        h1 = T.tensor([[1.0, 2.0], [3.0, 4.0]])
        h2 = T.tensor([[5.0, 6.0]])
        out = interaction_matrix(h1, h2).data
        assert out.shape == (2, 1, 2)
        np.testing.assert_array_equal(out[:, 0], [[5, 12], [15, 24]])

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            interaction_matrix(T.zeros((2, 3)), T.zeros((2, 4)))

    def test_symmetric_under_swap(self):
        rng = np.random.default_rng(0)
        a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(5, 4)))
        np.testing.assert_array_equal(interaction_matrix(a, b).data, interaction_matrix(b, a).data.transpose(1, 0, 2))


class TestStack:
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_shape_law_and_bitwise_slices(self, n, m, d, L, seed):
        rng = np.random.default_rng(seed)
        pair = pair_from_lengths(rng, n, m)
        layers = random_layers(rng, pair.length, d, L)
        stack = stack_interactions(layers, pair)
        assert stack.values.shape == (n, m, d, L)
        for l, h in enumerate(layers):
            h1 = h.data[1:1 + n]
            h2 = h.data[n + 2:n + 2 + m]
            expected = h1[:, None, :] * h2[None, :, :]
            assert stack.values.data[..., l].tobytes() == expected.tobytes()

    def test_batched_matches_unbatched(self):
        rng = np.random.default_rng(1)
        pairs = [pair_from_lengths(rng, 3, 2), pair_from_lengths(rng, 1, 4)]
        batch = make_batch(pairs)
        layers = random_layers(rng, batch.seq_len, 4, 2, batch=2)
        stack = stack_interactions(layers, batch)
        assert stack.values.shape == (2, 3, 4, 4, 2)
        for b, pair in enumerate(pairs):
            single = stack_interactions([Tensor(h.data[b, :pair.length]) for h in layers], pair)
            np.testing.assert_array_equal(stack.values.data[b, :pair.n, :pair.m], single.values.data)

    def test_padding_cells_are_zero(self):
        rng = np.random.default_rng(2)
        batch = make_batch([pair_from_lengths(rng, 3, 2), pair_from_lengths(rng, 1, 4)])
        stack = stack_interactions(random_layers(rng, batch.seq_len, 4, 2, batch=2), batch)
        v = stack.values.data
        assert not v[0, :, 2:].any() and not v[1, 1:].any()
        np.testing.assert_array_equal(stack.pair_mask[1], np.r_[[[True] * 4], [[False] * 4] * 2])

    def test_last_only(self):
        rng = np.random.default_rng(3)
        pair = pair_from_lengths(rng, 2, 2)
        layers = random_layers(rng, pair.length, 3, 4)
        stack = stack_interactions(layers, pair, "last_only")
        assert stack.layers_used == 1
        np.testing.assert_array_equal(stack.values.data[..., 0],
                                      interaction_matrix(*split_pair(layers[-1], pair)).data)

    def test_bad_selection(self):
        with pytest.raises(ConfigError):
            stack_interactions([T.zeros((5, 2))], pair_from_lengths(np.random.default_rng(0), 1, 1), "middle")


def test_sentence_index_points_invalid_slots_at_cls():
    batch = make_batch([pair_from_lengths(np.random.default_rng(0), 2, 1),
                        pair_from_lengths(np.random.default_rng(1), 1, 2)])
    idx1, idx2, mask = sentence_index(batch)
    np.testing.assert_array_equal(idx1, [[1, 2], [1, 0]])
    np.testing.assert_array_equal(idx2, [[4, 0], [3, 4]])
    assert mask.shape == (2, 2, 2)


def test_mask_interactions_is_idempotent():
    rng = np.random.default_rng(4)
    batch = make_batch([pair_from_lengths(rng, 3, 2), pair_from_lengths(rng, 1, 4)])
    stack = stack_interactions(random_layers(rng, batch.seq_len, 2, 1, batch=2), batch)
    again = mask_interactions(stack, batch)
    np.testing.assert_array_equal(again.values.data, stack.values.data)


def test_export_csv(tmp_path):
    rng = np.random.default_rng(5)
    pair = pair_from_lengths(rng, 2, 3)
    stack = stack_interactions(random_layers(rng, pair.length, 2, 2), pair)
    export_csv(stack, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row", "col", "channel", "layer", "value"]
    assert len(rows) == 1 + 2 * 3 * 2 * 2
    i, j, c, l, v = rows[7]
    assert float(v) == stack.values.data[int(i), int(j), int(c), int(l)]
