import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apbsn.pd import (
    batch_merge,
    batch_split,
    pd_forward,
    pd_inverse,
    pd_merge,
    pd_split,
    reflect_pad_to_multiple,
)

GRID = np.arange(16).reshape(4, 4)
GRID_PD2 = np.array([[0, 2, 1, 3], [8, 10, 9, 11], [4, 6, 5, 7], [12, 14, 13, 15]])


class TestFixtures:
    def test_pd2_on_4x4(self):
        np.testing.assert_array_equal(pd_forward(GRID, 2), GRID_PD2)

    def test_inverse_of_fixture(self):
        np.testing.assert_array_equal(pd_inverse(GRID_PD2, 2), GRID)

    def test_stride_one_is_identity(self):
        np.testing.assert_array_equal(pd_forward(GRID, 1), GRID)

    def test_full_stride_is_identity(self):
        # s = H: every sub-image is one pixel, block (qi, qj) holds pixel (qi, qj)
        np.testing.assert_array_equal(pd_forward(GRID, 4), GRID)

    def test_split_phases(self):
        subs = pd_split(GRID, 2)
        np.testing.assert_array_equal(subs[0], [[0, 2], [8, 10]])
        np.testing.assert_array_equal(subs[1], [[1, 3], [9, 11]])
        np.testing.assert_array_equal(subs[2], [[4, 6], [12, 14]])
        np.testing.assert_array_equal(subs[3], [[5, 7], [13, 15]])

    def test_channels_move_together(self):
        img = np.stack([GRID, GRID + 100, GRID + 200], axis=-1)
        out = pd_forward(img, 2)
        for c in range(3):
            np.testing.assert_array_equal(out[:, :, c], GRID_PD2 + 100 * c)


class TestValidation:
    @pytest.mark.parametrize("shape,s", [((5, 4), 2), ((4, 6), 4), ((9, 9), 2)])
    def test_indivisible_rejected(self, shape, s):
        with pytest.raises(ValueError, match="not divisible"):
            pd_forward(np.zeros(shape), s)
        with pytest.raises(ValueError, match="not divisible"):
            pd_inverse(np.zeros(shape), s)

    @pytest.mark.parametrize("s", [0, -2, 1.5])
    def test_bad_stride_rejected(self, s):
        with pytest.raises(ValueError, match="stride"):
            pd_forward(np.zeros((4, 4)), s)

    def test_merge_wrong_count(self):
        with pytest.raises(ValueError, match="expected 4"):
            pd_merge([np.zeros((2, 2))] * 3, 2)

    def test_batch_merge_wrong_count(self):
        with pytest.raises(ValueError):
            batch_merge(np.zeros((3, 1, 2, 2)), 2)


class TestBatched:
    def test_split_order_matches_pd_split(self, rng):
        x = rng.standard_normal((2, 3, 10, 15))
        out = batch_split(x, 5)
        assert out.shape == (50, 3, 2, 3)
        for n in range(2):
            subs = pd_split(x[n].transpose(1, 2, 0), 5)
            for i, sub in enumerate(subs):
                np.testing.assert_array_equal(out[n * 25 + i], sub.transpose(2, 0, 1))

    def test_roundtrip(self, rng):
        x = rng.standard_normal((3, 2, 12, 8))
        np.testing.assert_array_equal(batch_merge(batch_split(x, 4), 4), x)


class TestPadding:
    def test_noop_when_divisible(self):
        img = np.zeros((6, 8, 3))
        out, hw = reflect_pad_to_multiple(img, 2)
        assert out is img and hw == (6, 8)

    def test_reflect_values(self):
        img = np.arange(5.0).reshape(5, 1) * np.ones((1, 4))
        out, hw = reflect_pad_to_multiple(img, 4)
        assert out.shape == (8, 4) and hw == (5, 4)
        np.testing.assert_array_equal(out[:, 0], [0, 1, 2, 3, 4, 3, 2, 1])

    def test_tiny_image(self):
        out, hw = reflect_pad_to_multiple(np.ones((1, 1)), 5)
        assert out.shape == (5, 5) and hw == (1, 1)


shapes = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5))


@settings(max_examples=60, deadline=None)
@given(hw_s=shapes, channels=st.sampled_from([0, 1, 3]))
def test_pd_is_a_bijective_permutation(hw_s, channels):
    hb, wb, s = hw_s
    shape = (hb * s, wb * s) + ((channels,) if channels else ())
    img = np.arange(int(np.prod(shape))).reshape(shape)
    out = pd_forward(img, s)
    assert out.shape == img.shape
    # permutation of values, not just of shape
    assert np.array_equal(np.sort(out, axis=None), np.sort(img, axis=None))
    np.testing.assert_array_equal(pd_inverse(out, s), img)
    np.testing.assert_array_equal(pd_forward(pd_inverse(img, s), s), img)
    np.testing.assert_array_equal(pd_merge(pd_split(img, s), s), img)


@settings(max_examples=40, deadline=None)
@given(hw_s=shapes, y=st.integers(0, 1000), x=st.integers(0, 1000))
def test_pd_moves_each_pixel_to_its_phase_block(hw_s, y, x):
    hb, wb, s = hw_s
    h, w = hb * s, wb * s
    y, x = y % h, x % w
    img = np.zeros((h, w))
    img[y, x] = 1
    out = pd_forward(img, s)
    qi, qj = y % s, x % s
    assert out[qi * hb + y // s, qj * wb + x // s] == 1
