import dataclasses
import json

import numpy as np
import pytest

from hepadet.constants import LESION_CLASSES, PHASES
from hepadet.errors import ConfigError, DatasetError, PlacementError
from hepadet.phantoms import (
    PhantomSpec,
    generate_dataset,
    generate_phantom,
    read_manifest,
    read_subjects,
    split_dataset,
    worker_count,
    write_dataset,
)
from hepadet.phantoms.generator import liver_mask


def lesion_contrast(spec: PhantomSpec, seed: int):
    """Per phase, mean lesion HU minus mean parenchyma HU for a one-lesion subject."""
    phantom = generate_phantom(spec, seed, f"s{seed}")
    lesion = phantom.lesion_mask(0)
    parenchyma = liver_mask(spec) & (phantom.label_map == 0)
    return {
        phase: phantom.volumes[phase].voxels[lesion].mean() - phantom.volumes[phase].voxels[parenchyma].mean()
        for phase in PHASES
    }, phantom


def test_generation_is_deterministic(small_spec):
    first = generate_phantom(small_spec, 5, "subject001")
    second = generate_phantom(small_spec, 5, "subject001")
    other = generate_phantom(small_spec, 5, "subject002")
    for phase in PHASES:
        np.testing.assert_array_equal(first.volumes[phase].voxels, second.volumes[phase].voxels)
    assert first.lesions == second.lesions
    assert not np.array_equal(first.volumes["arterial"].voxels, other.volumes["arterial"].voxels)


def test_phantom_layout(phantom, small_spec):
    assert phantom.shape == small_spec.dims
    assert set(phantom.volumes) == set(PHASES)
    assert 1 <= len(phantom.lesions) <= 2
    for index, lesion in enumerate(phantom.lesions):
        mask = phantom.lesion_mask(index)
        assert lesion.center_slice in lesion.boxes
        assert mask[lesion.center]
        for k, (x0, y0, x1, y1) in lesion.boxes.items():
            ys, xs = np.nonzero(mask[k])
            assert (x0, y0, x1, y1) == (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
        assert set(lesion.boxes) == {k for k in range(mask.shape[0]) if mask[k].any()}
    covered = {k for lesion in phantom.lesions for k in lesion.boxes}
    assert set(phantom.lesion_free_slices()) == set(range(small_spec.dims[0])) - covered


def test_lesions_do_not_touch(small_spec):
    spec = dataclasses.replace(small_spec, dims=(24, 64, 64), lesion_classes=("cyst", "hcc", "hemangioma"))
    phantom = generate_phantom(spec, 11)
    assert set(np.unique(phantom.label_map)) == {0, 1, 2, 3}
    liver = liver_mask(spec)
    assert np.all(liver[phantom.label_map > 0])


def test_zero_lesions(small_spec):
    spec = dataclasses.replace(small_spec, lesion_count=(0, 0))
    phantom = generate_phantom(spec, 1)
    assert phantom.lesions == []
    assert not phantom.label_map.any()
    assert phantom.lesion_free_slices() == list(range(spec.dims[0]))


@pytest.mark.parametrize("seed", range(4))
def test_hcc_enhances_then_washes_out(small_spec, seed):
    contrast, _ = lesion_contrast(dataclasses.replace(small_spec, lesion_classes=("hcc",)), seed)
    assert contrast["arterial"] > 20
    assert contrast["delayed"] < -10


@pytest.mark.parametrize("seed", range(4))
def test_cyst_stays_dark(small_spec, seed):
    contrast, _ = lesion_contrast(dataclasses.replace(small_spec, lesion_classes=("cyst",)), seed)
    assert all(value < -30 for value in contrast.values())


@pytest.mark.parametrize("seed", range(4))
def test_hemangioma_fills_in(small_spec, seed):
    spec = dataclasses.replace(small_spec, lesion_classes=("hemangioma",))
    _, phantom = lesion_contrast(spec, seed)
    lesion = phantom.lesion_mask(0)
    means = {phase: phantom.volumes[phase].voxels[lesion].mean() for phase in PHASES}
    assert means["delayed"] > means["non_contrast"] + 20


def test_placement_failure(small_spec):
    spec = dataclasses.replace(
        small_spec,
        radius_mm={name: (40.0, 50.0) for name in LESION_CLASSES},
        lesion_classes=("cyst",),
        max_attempts=5,
    )
    with pytest.raises(PlacementError):
        generate_phantom(spec, 0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dims": (0, 8, 8)},
        {"lesion_count": (3, 1)},
        {"phase_times": (0.0, 25.0, 25.0)},
        {"lesion_classes": ("polyp",)},
        {"rim_fraction": 1.0},
        {"curves": {"cyst": (0.0, 0.0, 0.0)}},
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        PhantomSpec(**kwargs)


def test_spec_round_trip(small_spec):
    assert PhantomSpec.from_dict(json.loads(json.dumps(small_spec.to_dict()))) == small_spec


def test_dataset_round_trip(tmp_path, small_spec):
    phantoms = generate_dataset(small_spec, 2, seed=9)
    assert [p.subject_id for p in phantoms] == ["subject000", "subject001"]
    write_dataset(phantoms, tmp_path, seed=9, spec=small_spec)
    manifest = read_manifest(tmp_path)
    assert manifest.subject_ids == ["subject000", "subject001"] and manifest.seed == 9
    loaded = read_subjects(manifest)
    for original, copy in zip(phantoms, loaded):
        assert copy.lesions == original.lesions
        assert copy.label_map is None
        for phase in PHASES:
            np.testing.assert_array_equal(copy.volumes[phase].voxels, original.volumes[phase].voxels)
    with pytest.raises(DatasetError):
        manifest.entry("subject999")


def test_manifest_errors(tmp_path, small_spec):
    with pytest.raises(DatasetError):
        read_manifest(tmp_path)
    write_dataset(generate_dataset(small_spec, 1, seed=0), tmp_path)
    (tmp_path / "subject000.gt.json").unlink()
    with pytest.raises(DatasetError, match="missing file"):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text('{"subjects": [{"id": "x"}]}')
    with pytest.raises(DatasetError, match="malformed"):
        read_manifest(tmp_path)


def test_empty_dataset(small_spec):
    assert generate_dataset(small_spec, 0, seed=0) == []
    with pytest.raises(ValueError):
        generate_dataset(small_spec, -1, seed=0)


def test_split_dataset():
    subjects = [f"subject{i:03d}" for i in range(25)]
    train, test = split_dataset(subjects, 0.8, seed=7)
    assert (len(train), len(test)) == (20, 5)
    assert sorted(train + test) == subjects
    assert train == sorted(train) and test == sorted(test)
    assert split_dataset(subjects, 0.8, seed=7) == (train, test)
    assert split_dataset(subjects, 0.8, seed=8) != (train, test)
    assert [len(side) for side in split_dataset(subjects[:3], 0.5, seed=0)] == [2, 1]


def test_split_dataset_errors():
    with pytest.raises(DatasetError):
        split_dataset(["a", "b"], 0.8, seed=0)
    with pytest.raises(DatasetError):
        split_dataset(["a"], 0.5, seed=0)
    with pytest.raises(ValueError):
        split_dataset(["a", "b"], 1.0, seed=0)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("HEPADET_THREADS", raising=False)
    assert worker_count(3) == 3
    monkeypatch.setenv("HEPADET_THREADS", "2")
    assert worker_count() == 2
    monkeypatch.setenv("HEPADET_THREADS", "0")
    assert worker_count() == 1
    monkeypatch.setenv("HEPADET_THREADS", "many")
    assert worker_count(5) == 5


def test_ground_truth_is_plain_json(phantom):
    for lesion in phantom.lesions:
        assert all(type(c) is int for c in lesion.center)
        assert all(type(k) is int for k in lesion.boxes)
        assert all(type(c) is int for box in lesion.boxes.values() for c in box)
        data = json.loads(json.dumps(lesion.to_dict()))
        assert data["center"] == list(lesion.center)
        assert sorted(data["boxes"]) == sorted(str(k) for k in lesion.boxes)


@pytest.mark.parametrize("seed", range(4))
def test_cyst_does_not_enhance(small_spec, seed):
    spec = dataclasses.replace(small_spec, lesion_classes=("cyst",))
    phantom = generate_phantom(spec, seed)
    lesion = phantom.lesion_mask(0)
    arterial = phantom.volumes["arterial"].voxels[lesion].astype(np.float64)
    plain = phantom.volumes["non_contrast"].voxels[lesion].astype(np.float64)
    # Two independent noise draws per voxel.
    bound = 3 * spec.noise_sigma * np.sqrt(2.0 / lesion.sum())
    assert abs(arterial.mean() - plain.mean()) <= bound


def test_noiseless_cyst_is_flat(small_spec):
    spec = dataclasses.replace(small_spec, lesion_classes=("cyst",), noise_sigma=0.0)
    phantom = generate_phantom(spec, 2)
    lesion = phantom.lesion_mask(0)
    values = {phase: phantom.volumes[phase].voxels[lesion] for phase in PHASES}
    np.testing.assert_array_equal(values["arterial"], values["non_contrast"])
    np.testing.assert_array_equal(values["delayed"], values["non_contrast"])


@pytest.mark.slow
def test_hcc_arterial_outshines_delayed_over_seeds(small_spec):
    spec = dataclasses.replace(small_spec, lesion_classes=("hcc",))
    wins = 0
    for seed in range(100):
        phantom = generate_phantom(spec, seed, f"s{seed}")
        lesion = phantom.lesion_mask(0)
        voxels = {phase: phantom.volumes[phase].voxels[lesion].mean() for phase in ("arterial", "delayed")}
        wins += voxels["arterial"] > voxels["delayed"]
    assert wins >= 99
