import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sizeseg.dtransform import chebyshev_dt, chebyshev_dt_bruteforce
from sizeseg.sizefn import flip_size_table, flip_size_table_fast, object_size

from conftest import block_mask, random_mask

small_masks = st.tuples(st.integers(1, 7), st.integers(1, 7)).flatmap(
    lambda s: arrays(np.int8, s, elements=st.sampled_from([-1, 1])))


def size_oracle(m):
    m = np.asarray(m)
    if not np.any(m < 0):
        return 2 * max(m.shape)
    return 2 * int(chebyshev_dt_bruteforce(m).max())


class TestObjectSize:
    def test_all_background(self):
        assert object_size(-np.ones((4, 6))) == 0

    def test_block(self):
        assert object_size(block_mask()) == 4 == size_oracle(block_mask())

    @pytest.mark.parametrize("h, w", [(1, 1), (3, 7), (6, 2)])
    def test_saturated(self, h, w):
        assert object_size(np.ones((h, w))) == 2 * max(h, w)

    @settings(max_examples=200, deadline=None)
    @given(small_masks)
    def test_even_and_bounded(self, m):
        s = object_size(m)
        assert s % 2 == 0
        assert 0 <= s <= 2 * max(m.shape)
        assert s == size_oracle(m)

    @settings(max_examples=200, deadline=None)
    @given(small_masks, st.data())
    def test_monotone_in_foreground(self, m, data):
        i = data.draw(st.integers(0, m.size - 1))
        grown = m.copy()
        grown.flat[i] = 1
        assert object_size(grown) >= object_size(m)

    def test_maximiser(self, rng):
        for _ in range(50):
            m = random_mask(rng, 9, 11, 0.8)
            m[0, 0] = -1
            d = chebyshev_dt(m)
            i = np.unravel_index(np.argmax(d), d.shape)
            assert 2 * d[i] == object_size(m)


class TestFlipTable:
    def test_single_background_pixel(self):
        t = flip_size_table([[-1]])
        assert t.base_size == 0
        assert t.flipped_sizes[0, 0] == 2

    def test_block_center_flip(self):
        t = flip_size_table(block_mask())
        assert t.base_size == 4
        assert t.flipped_sizes[2, 2] == 2
        m = block_mask()
        m[2, 2] = -1
        assert size_oracle(m) == 2

    def test_matches_explicit_flips(self, rng):
        m = random_mask(rng, 6, 5, 0.7)
        t = flip_size_table(m)
        for i in range(m.size):
            f = m.copy()
            f.flat[i] = -f.flat[i]
            assert t.flipped_sizes.flat[i] == size_oracle(f)

    def test_ordering_invariants(self, rng):
        for _ in range(40):
            m = random_mask(rng, 7, 7, 0.75)
            t = flip_size_table_fast(m)
            fg = m > 0
            assert np.all(t.flipped_sizes[fg] <= t.base_size)
            # background -> foreground never shrinks, saturation included
            assert np.all(t.flipped_sizes[~fg] >= t.base_size)

    def test_fast_block(self):
        a, b = flip_size_table(block_mask()), flip_size_table_fast(block_mask())
        assert a.base_size == b.base_size
        np.testing.assert_array_equal(a.flipped_sizes, b.flipped_sizes)

    def test_fast_random(self, rng):
        for _ in range(200):
            h, w = rng.integers(1, 17, 2)
            m = random_mask(rng, h, w)
            a, b = flip_size_table(m), flip_size_table_fast(m)
            assert a.base_size == b.base_size
            np.testing.assert_array_equal(a.flipped_sizes, b.flipped_sizes)

    @pytest.mark.parametrize("shape", [(1, 1), (1, 5), (4, 3)])
    def test_fast_all_foreground(self, shape):
        m = np.ones(shape)
        np.testing.assert_array_equal(flip_size_table_fast(m).flipped_sizes,
                                      flip_size_table(m).flipped_sizes)

    def test_skip_rule_far_foreground(self):
        # big square object plus a lone far-away pixel: flipping the lone pixel
        # is skipped by the maximiser rule and must leave the size unchanged
        m = -np.ones((16, 16), dtype=np.int8)
        m[1:8, 1:8] = 1
        m[14, 14] = 1
        t = flip_size_table_fast(m)
        assert t.base_size == 8
        assert t.flipped_sizes[14, 14] == 8
        assert t.flipped_sizes[14, 14] == flip_size_table(m).flipped_sizes[14, 14]

    def test_fast_accepts_precomputed_dt(self, rng):
        m = random_mask(rng, 8, 8, 0.7)
        m[0, 0] = -1
        a = flip_size_table_fast(m, chebyshev_dt(m))
        np.testing.assert_array_equal(a.flipped_sizes, flip_size_table(m).flipped_sizes)
