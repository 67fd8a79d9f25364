import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cowseg.core import (
    BinaryMask,
    Episode,
    Image,
    PartitionMasks,
    PrototypeBank,
    ShapeError,
    ValidationError,
    downsample_nearest,
    validate_partition,
)
from cowseg.ssp import partition_masks


def _pm(hf, hb, nf, nb):
    return PartitionMasks(*(torch.tensor(m, dtype=torch.float64) for m in (hf, hb, nf, nb)))


def test_validate_partition_exact_cover():
    assert validate_partition(_pm([[0, 1], [0, 0]], [[0, 0], [1, 0]], [[1, 0], [0, 0]], [[0, 0], [0, 1]]))


def test_validate_partition_overlap_and_hole():
    z = [[0, 0], [0, 0]]
    assert not validate_partition(_pm([[1, 0], [0, 0]], z, [[1, 0], [0, 0]], z))


def test_validate_partition_uncovered_pixel():
    assert not validate_partition(_pm([[0]], [[0]], [[0]], [[0]]))


def test_validate_partition_shape_mismatch():
    with pytest.raises(ShapeError):
        validate_partition(_pm([[0, 1]], [[0]], [[0]], [[0]]))


masks = st.integers(1, 12).flatmap(
    lambda h: st.integers(1, 12).flatmap(
        lambda w: st.tuples(arrays(np.uint8, (h, w), elements=st.integers(0, 1)),
                            arrays(np.uint8, (h, w), elements=st.integers(0, 1)))))


@given(masks)
@settings(max_examples=200, deadline=None)
def test_partition_from_any_mask_pair_is_valid(pair):
    gt, pred = pair
    assert validate_partition(partition_masks(gt, pred))


def _img(v=0.5, n=16):
    return Image(np.full((n, n), v))


def _mask(fg, n=16):
    m = np.zeros((n, n), np.uint8)
    m.flat[:fg] = 1
    return BinaryMask(m)


@pytest.mark.parametrize("fg", [0, 256])
def test_episode_rejects_degenerate_support(fg):
    with pytest.raises(ValidationError):
        Episode(_img(), _mask(fg), _img(), _mask(5), 1)


def test_episode_shape_mismatch():
    with pytest.raises(ShapeError):
        Episode(_img(), _mask(5), _img(n=20), _mask(5, n=20), 1)


def test_image_validation():
    with pytest.raises(ValidationError):
        Image(np.zeros((8, 32)))
    with pytest.raises(ValidationError):
        Image(np.full((16, 16), 1.5))
    with pytest.raises(ValidationError):
        Image(np.full((16, 16), np.nan))
    assert _img() == _img()


def test_types_are_immutable():
    img = _img()
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 0.1
    with pytest.raises(ValidationError):
        BinaryMask(np.full((4, 4), 2))


def test_bank_rejects_zero_row_and_missing_global():
    v = torch.ones(3, 4)
    PrototypeBank(v, ("hard", "normal", "global"))
    v[1] = 0
    with pytest.raises(ValidationError):
        PrototypeBank(v, ("hard", "normal", "global"))
    with pytest.raises(ValidationError):
        PrototypeBank(torch.ones(2, 4), ("hard", "normal"))


def test_downsample_nearest_keeps_binary():
    m = np.zeros((64, 64), np.uint8)
    m[10:30, 5:50] = 1
    d = downsample_nearest(m, (16, 16))
    assert d.shape == (16, 16)
    assert set(d.unique().tolist()) <= {0.0, 1.0}
