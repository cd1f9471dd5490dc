import json

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from hepadet.constants import HU_MAX, HU_MIN, SLAB_DEPTH
from hepadet.errors import ConfigError, DatasetError, ShapeError
from hepadet.preprocess import (
    AugmentPlan,
    Slab,
    Volume,
    WindowSpec,
    apply_augment,
    assemble_slab,
    augment,
    plan_augment,
    read_pgm,
    read_volume,
    resample_slice,
    slab_boxes,
    to_2d,
    window_to_u8,
    write_pgm,
    write_volume,
)
from hepadet.preprocess.augment import flip_boxes, scale_boxes
from hepadet.preprocess.slab import slab_indices

boxes = st.lists(
    st.tuples(st.floats(0, 30), st.floats(0, 30), st.floats(31, 64), st.floats(31, 64)),
    max_size=5,
)


def stepped_volume(depth: int, size: int = 8) -> Volume:
    """Slice ``k`` holds ``10 * k`` HU everywhere."""
    voxels = np.repeat(np.arange(depth) * 10, size * size).reshape(depth, size, size)
    return Volume(voxels, (3.0, 1.0, 1.0), "arterial", "stepped")


def test_window_spot_values():
    np.testing.assert_array_equal(window_to_u8(np.array([110, 150, 190])), [0, 128, 255])
    np.testing.assert_array_equal(window_to_u8(np.array([HU_MIN, HU_MAX])), [0, 255])


def test_window_is_monotone_over_full_range():
    values = window_to_u8(np.arange(HU_MIN, HU_MAX + 1))
    assert values.dtype == np.uint8
    assert np.all(np.diff(values.astype(int)) >= 0)


@given(st.floats(1, 2000), st.floats(-1000, 1000), st.integers(HU_MIN, HU_MAX - 1))
def test_any_window_is_monotone(width, level, hu):
    spec = WindowSpec(width=width, level=level)
    low, high = window_to_u8(np.array([hu, hu + 1]), spec)
    assert low <= high


def test_window_rejects_non_positive_width():
    with pytest.raises(ConfigError):
        WindowSpec(width=0)
    assert WindowSpec.from_dict({"width": 250, "level": 60}).lower == -65
    with pytest.raises(ConfigError):
        WindowSpec.from_dict({"widht": 250})


@pytest.mark.parametrize("depth", [1, 2, 20])
@pytest.mark.parametrize("edge", ["first", "last"])
def test_slab_replicates_boundary_slices(depth, edge):
    window = WindowSpec(width=400, level=100)
    volume = stepped_volume(depth)
    center = 0 if edge == "first" else depth - 1
    slab = assemble_slab(volume, center, window, target=8)
    assert slab.channels.shape == (SLAB_DEPTH, 8, 8)
    assert slab.channels.min() >= 0.0 and slab.channels.max() <= 1.0
    for channel, source in enumerate(np.clip(np.arange(center - 4, center + 5), 0, depth - 1)):
        expected = window_to_u8(volume.voxels[source], window) / 255.0
        np.testing.assert_array_equal(slab.channels[channel], expected)


def test_slab_indices():
    np.testing.assert_array_equal(slab_indices(0, 20), [0, 0, 0, 0, 0, 1, 2, 3, 4])
    np.testing.assert_array_equal(slab_indices(19, 20), [15, 16, 17, 18, 19, 19, 19, 19, 19])
    np.testing.assert_array_equal(slab_indices(0, 1), [0] * 9)


def test_slab_rejects_bad_centre_and_shape():
    with pytest.raises(IndexError):
        assemble_slab(stepped_volume(4), 4)
    with pytest.raises(ShapeError):
        Slab(np.zeros((3, 4, 4)), 0)


def test_slab_resamples_to_target():
    slab = assemble_slab(stepped_volume(10, size=16), 5, WindowSpec(400, 100), target=32)
    assert slab.size == (32, 32)
    np.testing.assert_allclose(slab.center, window_to_u8(np.array(50), WindowSpec(400, 100)) / 255.0)


def test_resample_identity_and_corners():
    image = np.arange(20, dtype=float).reshape(4, 5)
    np.testing.assert_allclose(resample_slice(image, (4, 5)), image)
    up = resample_slice(image, (7, 9))
    assert up[0, 0] == image[0, 0] and up[-1, -1] == image[-1, -1]
    with pytest.raises(ShapeError):
        resample_slice(np.zeros((1, 5)), 4)


def test_slab_boxes_scale_to_target():
    assert slab_boxes([(2, 4, 10, 12)], (32, 16), 64) == [(8.0, 8.0, 40.0, 24.0)]


def test_to_2d_keeps_centre():
    channels = np.arange(SLAB_DEPTH * 4).reshape(1, SLAB_DEPTH, 2, 2).astype(float)
    single = to_2d(channels)
    assert single.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(single[0, 0], channels[0, SLAB_DEPTH // 2])


@given(boxes)
@example([(5e-324, 0.0, 31.0, 31.0)])
def test_flip_is_an_involution(values):
    twice = flip_boxes(flip_boxes(values, 64), 64)
    np.testing.assert_allclose(np.reshape(twice, (-1, 4)), np.reshape(values, (-1, 4)), atol=1e-9)


@given(boxes)
def test_unit_scale_keeps_boxes(values):
    scaled = scale_boxes(values, 1.0, (64, 64))
    np.testing.assert_allclose(np.reshape(scaled, (-1, 4)), np.reshape(values, (-1, 4)), atol=1e-12)


def test_flip_plan_mirrors_pixels_and_boxes(rng):
    slab = Slab(rng.random((SLAB_DEPTH, 16, 16)), 3)
    flipped, out = apply_augment(slab, [(1, 2, 5, 6)], AugmentPlan(flip=True))
    np.testing.assert_array_equal(flipped.channels, slab.channels[:, :, ::-1])
    assert out == [(11.0, 2.0, 15.0, 6.0)]


def test_identity_plan_and_shift(rng):
    slab = Slab(rng.uniform(0.1, 0.9, (SLAB_DEPTH, 8, 8)), 0)
    assert AugmentPlan().is_identity
    same, out = apply_augment(slab, [(0, 0, 4, 4)], AugmentPlan())
    np.testing.assert_array_equal(same.channels, slab.channels)
    shifted, _ = apply_augment(slab, [], AugmentPlan(shift=0.05))
    np.testing.assert_allclose(shifted.channels, slab.channels + 0.05)


def test_augment_is_seeded(rng):
    slab = Slab(rng.random((SLAB_DEPTH, 16, 16)), 0)
    assert plan_augment(4) == plan_augment(4)
    first, first_boxes = augment(slab, [(2, 2, 8, 8)], seed=4)
    second, second_boxes = augment(slab, [(2, 2, 8, 8)], seed=4)
    np.testing.assert_array_equal(first.channels, second.channels)
    assert first_boxes == second_boxes
    assert first.channels.min() >= 0 and first.channels.max() <= 1


def test_volume_round_trip(tmp_path):
    volume = stepped_volume(3)
    sidecar = write_volume(volume, tmp_path)
    assert sidecar.name == "stepped_arterial.vol.json"
    loaded = read_volume(sidecar)
    np.testing.assert_array_equal(loaded.voxels, volume.voxels)
    assert loaded.spacing == volume.spacing and loaded.phase == "arterial"


def test_volume_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), HU_MAX + 1), (1, 1, 1), "arterial", "x")
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), (1, 1, 1), "portal", "x")
    sidecar = write_volume(stepped_volume(2), tmp_path)
    header = json.loads(sidecar.read_text())
    header["dtype"] = "f32le"
    sidecar.write_text(json.dumps(header))
    with pytest.raises(DatasetError):
        read_volume(sidecar)


def test_pgm_round_trip(tmp_path, rng):
    image = rng.integers(0, 256, (5, 7)).astype(np.uint8)
    np.testing.assert_array_equal(read_pgm(write_pgm(image, tmp_path / "a.pgm")), image)
    with pytest.raises(ValueError):
        write_pgm(image.astype(float), tmp_path / "b.pgm")
