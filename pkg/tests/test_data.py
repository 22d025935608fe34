import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssdkd import data, pgm
from ssdkd.data import IdxParseError


def test_blobs_deterministic():
    a, b = data.make_blobs(seed=3), data.make_blobs(seed=3)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_blobs_point_masses_are_perfectly_separable():
    ds = data.make_blobs(per_class=50, spread=1e-6, seed=1)
    train, test = data.train_test_split(ds, 100, seed=1)
    assert data.nearest_mean_accuracy(train, test) == 1.0


def test_blobs_default_nearest_mean_oracle():
    ds = data.make_blobs()
    train, test = data.train_test_split(ds, 1000)
    assert data.nearest_mean_accuracy(train, test) >= 0.99


def test_blobs_errors():
    with pytest.raises(ValueError):
        data.make_blobs(dim=0)
    with pytest.raises(ValueError):
        data.make_blobs(classes=1)
    with pytest.raises(ValueError):
        data.make_blobs(spread=0)


def test_lattice_distinct_means():
    m = data.lattice_means(10, 3)
    assert len({tuple(r) for r in m}) == 10
    assert np.all(np.abs(m) <= 1.0)


def test_normalise_denormalise_identity(rng):
    raw = rng.standard_normal((30, 5)) * [1, 2, 3, 4, 0] + 7
    ds = data.from_raw(raw, np.zeros(30, int), 1)
    np.testing.assert_allclose(ds.denormalize(ds.samples), raw, atol=1e-9)
    np.testing.assert_allclose(ds.normalize(raw), ds.samples, atol=1e-12)


def test_label_range_checked():
    with pytest.raises(ValueError):
        data.from_raw(np.zeros((2, 1)), [0, 3], 2)


# -- IDX ---------------------------------------------------------------------

def test_idx_hand_assembled_labels():
    blob = bytes([0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x03, 7, 2, 9])
    np.testing.assert_array_equal(data.parse_idx(blob), [7, 2, 9])


def test_idx_truncation_offset():
    blob = bytes([0, 0, 8, 1, 0, 0, 0, 3, 7, 2])
    with pytest.raises(IdxParseError) as info:
        data.parse_idx(blob)
    assert info.value.offset == 10


def test_idx_errors():
    with pytest.raises(IdxParseError) as info:
        data.parse_idx(bytes([0, 0, 0x0D, 1, 0, 0, 0, 1, 0]))
    assert info.value.offset == 2
    with pytest.raises(IdxParseError):
        data.parse_idx(bytes([0, 1, 8, 1]))
    with pytest.raises(IdxParseError):
        data.parse_idx(bytes([0, 0, 8]))
    with pytest.raises(IdxParseError):
        data.parse_idx(bytes([0, 0, 8, 2, 0, 0, 0]))
    huge = bytes([0, 0, 8, 3]) + b"\xff\xff\xff\xff" * 3
    with pytest.raises(IdxParseError):
        data.parse_idx(huge)


@given(arrays(np.uint8, st.lists(st.integers(0, 5), min_size=1, max_size=3).map(tuple)))
def test_idx_round_trip(a):
    back = data.parse_idx(data.write_idx(a))
    assert back.shape == a.shape and np.array_equal(back, a)


@given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 4))), st.binary(max_size=16))
def test_idx_ignores_trailing_garbage(a, junk):
    blob = data.write_idx(a)
    np.testing.assert_array_equal(data.parse_idx(blob + junk), a)
    if junk:
        with pytest.raises(IdxParseError):
            data.parse_idx(blob + junk, strict=True)


def test_load_idx_dataset(rng):
    imgs = rng.integers(0, 256, (6, 4, 5), dtype=np.uint8)
    labs = np.array([0, 1, 2, 0, 1, 2], dtype=np.uint8)
    ds = data.load_idx_dataset(data.write_idx(imgs), data.write_idx(labs))
    assert ds.spatial_shape == (4, 5) and ds.classes == 3 and ds.dim == 20
    np.testing.assert_allclose(ds.denormalize(ds.samples), imgs.reshape(6, 20) / 255, atol=1e-12)


# -- augmentation ------------------------------------------------------------

def test_double_flip_identity(rng):
    img = rng.standard_normal((5, 7))
    np.testing.assert_array_equal(data.hflip(data.hflip(img)), img)


def test_centre_crop_recovers_image(rng):
    img = rng.standard_normal((8, 8))
    np.testing.assert_array_equal(data.pad_crop(img, 4, 4), img)


def test_augment_pixels_come_from_image_or_padding(rng):
    batch = rng.integers(1, 200, (20, 64)).astype(float)
    out = data.augment(batch, (8, 8), np.random.default_rng(0))
    assert out.shape == batch.shape
    for src, dst in zip(batch, out):
        assert set(dst) <= set(src) | {0.0}


def test_augment_forced_flip_twice_is_identity(rng):
    batch = rng.standard_normal((3, 12))

    class Forced:  # every sample flips, crops at the centre
        def integers(self, lo, hi, size):
            return np.full(size, 4)

        def random(self, n):
            return np.zeros(n)

    once = data.augment(batch, (3, 4), Forced())
    np.testing.assert_array_equal(data.augment(once, (3, 4), Forced()), batch)


def test_augment_deterministic_and_non_spatial_rejected(rng):
    batch = rng.standard_normal((4, 16))
    a = data.augment(batch, (4, 4), np.random.default_rng(5))
    b = data.augment(batch, (4, 4), np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        data.augment(batch, None, rng)


# -- dataset cache -------------------------------------------------------------

def test_dataset_cache_round_trip(tmp_path):
    from ssdkd.nn import load_checkpoint, save_checkpoint

    ds = data.make_blobs(classes=3, per_class=10, dim=2)
    arrays = data.dataset_arrays(ds)
    assert all(k.startswith(data.DATA_TAG) for k in arrays)
    save_checkpoint(tmp_path / "d.ckpt", arrays)
    back = data.dataset_from_arrays(load_checkpoint(tmp_path / "d.ckpt"))
    np.testing.assert_array_equal(back.samples, ds.samples)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.classes == 3 and back.spatial_shape is None


# -- PGM ---------------------------------------------------------------------

def test_pgm_header():
    blob = pgm.write_pgm(np.arange(64, dtype=np.uint8).reshape(8, 8))
    assert blob.startswith(b"P5\n8 8\n255\n") and len(blob) == len(b"P5\n8 8\n255\n") + 64


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-0.5, 1.5)))
def test_pgm_round_trip_recovers_clamped_bytes(img):
    expected = pgm.to_bytes(img)
    assert expected.min() >= 0 and expected.max() <= 255
    np.testing.assert_array_equal(pgm.parse_pgm(pgm.write_pgm(img)), expected)


def test_pgm_parsed_by_independent_reader(rng):
    from io import BytesIO

    from PIL import Image

    img = rng.integers(0, 256, (5, 9), dtype=np.uint8)
    decoded = np.asarray(Image.open(BytesIO(pgm.write_pgm(img))))
    np.testing.assert_array_equal(decoded, img)


def test_pgm_rejects_garbage():
    with pytest.raises(ValueError):
        pgm.parse_pgm(b"P6\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        pgm.parse_pgm(b"P5\n2 2\n255\n\x00")
