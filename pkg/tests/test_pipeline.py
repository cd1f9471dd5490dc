import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest

from hepadet.autodiff.graph import backward
from hepadet.config import RunConfig, apply_overrides, load_config
from hepadet.constants import ABLATION_LABELS, BACKGROUND, PHASES, SLAB_DEPTH
from hepadet.detection import EvalCounts, GateModel
from hepadet.errors import ConfigError, DatasetError, DivergenceError
from hepadet.phantoms import generate_dataset, split_dataset
from hepadet.pipeline import (
    Detector,
    TrainResult,
    ablation_configs,
    build_sample,
    detect,
    evaluate_detector,
    evaluation_samples,
    infer_subjects,
    load_detector,
    predicted_class_mass,
    run_ablation,
    save_detector,
    train_detector,
    training_samples,
)
from hepadet.pipeline import ablation as ablation_module
from hepadet.pipeline.ablation import log_name
from hepadet.pipeline.detector import CLS_LOSS, GATE_LOSS, LOSS, RPN_LOSS
from hepadet.pipeline.samples import evaluation_slices, training_slices
from hepadet.pipeline.train import batch_feeds, make_batches
from hepadet.preprocess.augment import AugmentPlan
from hepadet.utils.logs import read_json_lines


def override(config: RunConfig, *assignments: str) -> RunConfig:
    return RunConfig.from_dict(apply_overrides(config.to_dict(), assignments))


@pytest.mark.parametrize(
    "count, size, expected",
    [
        (5, 2, [[0, 1], [2, 3, 4]]),
        (4, 2, [[0, 1], [2, 3]]),
        (5, 4, [[0, 1, 2, 3, 4]]),
        (1, 4, [[0]]),
        (0, 2, []),
    ],
)
def test_make_batches(count, size, expected):
    assert make_batches(list(range(count)), size) == expected


def test_evaluation_slices_cover_each_lesion_once(phantom, desk_config):
    slices = evaluation_slices(phantom)
    centres = {lesion.center_slice for lesion in phantom.lesions}
    assert centres <= set(slices)
    assert len(set(slices) - centres) <= 1
    samples = [build_sample(phantom, index, desk_config, centred_only=True) for index in slices]
    assert sum(len(sample.labels) for sample in samples) == len(phantom.lesions)


def test_training_slices(phantom):
    slices = training_slices(phantom, min_box=1, negatives=0)
    covered = {k for lesion in phantom.lesions for k in lesion.boxes}
    assert set(slices) == covered
    with_negative = training_slices(phantom, min_box=1, negatives=1)
    assert len(with_negative) == len(slices) + (1 if phantom.lesion_free_slices() else 0)
    assert training_slices(phantom, min_box=1000, negatives=0) == []


def test_build_sample(phantom, desk_config):
    lesion = phantom.lesions[0]
    sample = build_sample(phantom, lesion.center_slice, desk_config)
    assert set(sample.slabs) == {"arterial"}
    assert sample.channels()["arterial"].shape == (SLAB_DEPTH, 64, 64)
    assert lesion.label in sample.labels
    factor = 64 / 48
    x0, y0, x1, y1 = lesion.boxes[lesion.center_slice]
    index = phantom.lesions_on_slice(lesion.center_slice).index(lesion)
    np.testing.assert_allclose(sample.boxes[index], (x0 * factor, y0 * factor, x1 * factor, y1 * factor))
    truth = sample.ground_truth()
    assert all(gt.slice_index == lesion.center_slice for gt in truth)


def test_multimodal_sample_keeps_phases_aligned(phantom, desk_config):
    config = override(desk_config, "pipeline.multimodal=true")
    lesion = phantom.lesions[0]
    sample = build_sample(phantom, lesion.center_slice, config)
    assert tuple(sample.slabs) == PHASES
    flipped = sample.augmented(AugmentPlan(flip=True))
    for phase in PHASES:
        np.testing.assert_array_equal(flipped.slabs[phase].channels, sample.slabs[phase].channels[:, :, ::-1])
    x0, y0, x1, y1 = sample.boxes[0]
    np.testing.assert_allclose(flipped.boxes[0], (64 - x1, y0, 64 - x0, y1))
    assert flipped.labels == sample.labels


def test_samples_from_subjects(small_spec, desk_config):
    phantoms = generate_dataset(small_spec, 2, seed=4)
    train = training_samples(phantoms, desk_config)
    assert {sample.subject_id for sample in train} <= {"subject000", "subject001"}
    test = evaluation_samples(phantoms, desk_config)
    assert sum(len(sample.labels) for sample in test) == sum(len(p.lesions) for p in phantoms)


def test_detector_layout(desk_config):
    detector = Detector(desk_config)
    assert detector.variant_name == "R-50-2.5d"
    assert detector.level_shapes == [(16, 16), (8, 8), (4, 4), (2, 2)]
    assert len(detector.anchors) == (256 + 64 + 16 + 4) * 9
    assert detector.image_size == (64, 64) and detector.roi_stride == 4
    assert detector.reference == "arterial"
    assert set(detector.head_weights()) and all(k.startswith(("rpn.", "cls.")) for k in detector.head_weights())


def test_detector_rejects_mismatched_strides(desk_config):
    with pytest.raises(ConfigError):
        Detector(override(desk_config, "anchors.strides=[4, 8, 16, 64]"))


def test_2d_detector_feeds_centre_slice(desk_config, rng):
    detector = Detector(override(desk_config, "pipeline.input_mode=2d"))
    assert detector.variant_name == "R-50-2d"
    slab = rng.random((SLAB_DEPTH, 64, 64))
    feeds = detector.slab_feeds([{"arterial": slab}, {"arterial": slab}])
    assert feeds["slab.arterial"].shape == (2, 1, 64, 64)
    np.testing.assert_array_equal(feeds["slab.arterial"][0, 0], slab[SLAB_DEPTH // 2])


def test_multimodal_detector_merges_phases(desk_config, phantom):
    detector = Detector(override(desk_config, "pipeline.multimodal=true"))
    assert detector.variant_name == "R-50-2.5d-mm"
    assert any(name.startswith("relation.") for name in detector.graph.get_weights())
    sample = build_sample(phantom, phantom.lesions[0].center_slice, detector.config)
    feeds = detector.slab_feeds([sample.channels()])
    assert set(feeds) == {f"slab.{phase}" for phase in PHASES}
    detector.graph.run(feeds, targets=detector.level_labels, mode="infer")
    fused = detector.fused_pyramid(0)
    assert fused["block1"].shape == (1, 8, 16, 16)
    assert fused["block4"].shape == (1, 8, 2, 2)


def test_training_step_reaches_every_parameter(desk_config, phantom, rng):
    detector = Detector(desk_config)
    samples = [build_sample(phantom, lesion.center_slice, desk_config) for lesion in phantom.lesions]
    samples.append(build_sample(phantom, phantom.shape[0] // 2, desk_config))
    feeds = batch_feeds(detector, samples[:2], rng)
    assert feeds["slab.arterial"].shape == (2, SLAB_DEPTH, 64, 64)
    assert feeds["rpn_targets"].shape == (2, len(detector.anchors))
    assert feeds["rois"].shape[1] == 5 and len(feeds["rois"]) == len(feeds["roi_labels"])
    assert set(np.unique(feeds["rois"][:, 0])) <= {0.0, 1.0}
    assert BACKGROUND in feeds["roi_labels"]
    detector.graph.run(feeds, targets=[LOSS], mode="train", seed=3)
    assert np.isfinite(detector.graph.value(LOSS))
    grads = backward(detector.graph, LOSS)
    assert set(grads) == set(detector.graph.get_weights())
    assert all(np.all(np.isfinite(grad)) for grad in grads.values())
    assert np.abs(grads["gate.weights"]).sum() > 0


def test_gate_term_joins_training_loss(desk_config, phantom, rng):
    detector = Detector(desk_config)
    samples = [build_sample(phantom, lesion.center_slice, desk_config) for lesion in phantom.lesions]
    samples.append(build_sample(phantom, phantom.shape[0] // 2, desk_config))
    feeds = batch_feeds(detector, samples, rng)
    assert feeds["gate_features"].shape == (len(feeds["rois"]), 18)
    np.testing.assert_array_equal(feeds["gate_targets"][:, 0], feeds["roi_labels"] != BACKGROUND)
    graph = detector.graph
    graph.run(feeds, targets=[LOSS], mode="train", seed=3)
    # Zero gate weights score every crop at one half.
    assert graph.value(GATE_LOSS) == pytest.approx(np.log(2.0))
    terms = sum(float(graph.value(label)) for label in (RPN_LOSS, CLS_LOSS, GATE_LOSS))
    assert float(graph.value(LOSS)) == pytest.approx(terms)

    ungated = Detector(override(desk_config, "pipeline.use_gate=false"))
    assert not any(name.startswith("gate.") for name in ungated.graph.get_weights())
    plain = batch_feeds(ungated, samples[:2], rng)
    assert "gate_features" not in plain and "gate_targets" not in plain
    ungated.graph.run(plain, targets=[LOSS], mode="train", seed=3)
    assert not ungated.graph.has_label(GATE_LOSS)


def test_gate_weights_live_in_the_graph(desk_config):
    detector = Detector(desk_config)
    gate = GateModel(weights=np.arange(18.0), bias=0.5, mean=np.ones(18), scale=np.full(18, 2.0))
    detector.set_gate(gate)
    assert detector.gate is gate
    np.testing.assert_array_equal(detector.graph.get_weights()["gate.weights"][:, 0], np.arange(18.0))
    detector.graph.set_weights({"gate.bias": np.array([-1.0])})
    trained = detector.trained_gate()
    assert trained.bias == -1.0
    np.testing.assert_array_equal(trained.weights, np.arange(18.0))
    np.testing.assert_array_equal(trained.scale, gate.scale)


def test_training_needs_two_samples(desk_config, small_spec):
    spec = dataclasses.replace(small_spec, lesion_count=(0, 0))
    phantoms = generate_dataset(spec, 1, seed=0)
    config = override(desk_config, "data.negatives_per_subject=1")
    with pytest.raises(DatasetError):
        train_detector(config, phantoms)


def test_detect_untrained(desk_config, phantom):
    detector = Detector(desk_config)
    sample = build_sample(phantom, phantom.lesions[0].center_slice, desk_config)
    result = detect(detector, sample)
    assert 0 < len(result.proposals) <= desk_config.pipeline.top_k
    assert result.gated == result.proposals
    assert len(result.detections) <= len(result.gated)
    assert all(d.label != BACKGROUND for d in result.detections)
    assert all(d.box.slice_index == sample.slice_index for d in result.detections)


def test_closed_gate_blocks_every_proposal(desk_config, phantom):
    detector = Detector(desk_config)
    detector.set_gate(GateModel(bias=-20.0))
    result = detect(detector, build_sample(phantom, phantom.lesions[0].center_slice, desk_config))
    assert result.proposals and result.gated == [] and result.detections == []
    ungated = Detector(override(desk_config, "pipeline.use_gate=false"))
    ungated.set_gate(GateModel(bias=-20.0))
    again = detect(ungated, build_sample(phantom, phantom.lesions[0].center_slice, desk_config))
    assert again.gated == again.proposals


def test_evaluate_scores_each_lesion_once(desk_config, phantom):
    detector = Detector(desk_config)
    accuracy, counts, results = evaluate_detector(detector, [phantom])
    assert counts.lesions == len(phantom.lesions)
    assert len(results) == len(evaluation_slices(phantom))
    for name, value in accuracy.items():
        assert math.isnan(value) if counts.total[name] == 0 else 0 <= value <= 100
    mass = predicted_class_mass(results, detector)
    assert mass is not None and 0 < mass < 1


def test_infer_subjects_writes_outputs(tmp_path, desk_config, phantom):
    detector = Detector(desk_config)
    total = infer_subjects(detector, [phantom], tmp_path, deterministic=True)
    detections = read_json_lines(tmp_path / "detections.jsonl")
    proposals = read_json_lines(tmp_path / "proposals.jsonl")
    assert len(detections) == total
    assert proposals and all(record["subject"] == "subject000" for record in proposals)
    assert all("time" not in record for record in proposals)
    assert all(record["phase"] == "arterial" for record in proposals)
    assert all(record["class"] in ("cyst", "hemangioma", "hcc") for record in detections)
    stems = {f"subject000_s{lesion.center_slice:03d}.pgm" for lesion in phantom.lesions}
    assert stems <= {path.name for path in (tmp_path / "overlays").iterdir()}


def test_checkpoint_round_trip(tmp_path, desk_config):
    detector = Detector(desk_config)
    name = sorted(detector.graph.get_weights())[0]
    detector.graph.set_weights({name: detector.graph.get_weights()[name] + 1.0})
    detector.graph.buffers["marker.running_mean"] = np.arange(3.0)
    detector.set_gate(GateModel(bias=1.5))
    history = [{"epoch": 1, "loss": 2.5}]
    path = save_detector(TrainResult(detector, history), tmp_path / "model.json")
    loaded = load_detector(path)
    assert loaded.variant_name == detector.variant_name
    assert loaded.config.to_dict() == desk_config.to_dict()
    for key, value in detector.graph.get_weights().items():
        np.testing.assert_array_equal(loaded.graph.get_weights()[key], value)
    np.testing.assert_array_equal(loaded.graph.buffers["marker.running_mean"], np.arange(3.0))
    assert loaded.gate.bias == 1.5
    with pytest.raises(FileNotFoundError):
        load_detector(tmp_path / "absent.json")


def test_ablation_configs(desk_config):
    with pytest.raises(ConfigError):
        ablation_configs(desk_config)
    variants = {label: {"net": {"depth": 50}} for label in ABLATION_LABELS}
    config = RunConfig.from_dict({**desk_config.to_dict(), "variants": variants})
    assert [label for label, _ in ablation_configs(config)] == list(ABLATION_LABELS)
    assert log_name("R-101 region fusion") == "r-101_region_fusion"


def test_ablation_records_diverged_rows(monkeypatch, tmp_path, desk_config):
    def fake_train(config, phantoms, results=None):
        if config.net.depth == 101:
            raise DivergenceError("loss became nan")
        results.record(epoch=1, loss=1.0)
        return TrainResult(detector=None, history=[{"loss": 1.0}])

    def fake_evaluate(detector, phantoms):
        counts = EvalCounts()
        counts.total["cyst"], counts.correct["cyst"] = 2, 1
        return counts.accuracy(), counts, []

    monkeypatch.setattr(ablation_module, "train_detector", fake_train)
    monkeypatch.setattr(ablation_module, "evaluate_detector", fake_evaluate)
    variants = [("R-50", desk_config), ("R-101", override(desk_config, "net.depth=101"))]
    table = run_ablation(variants, [], [], iou_threshold=0.3, log_dir=tmp_path, deterministic=True)
    assert table.labels == ["R-50", "R-101"]
    assert table.rows["R-50"]["cyst"] == 50.0
    assert table.failed == {"R-101": "loss became nan"}
    assert read_json_lines(tmp_path / "r-50.train.jsonl") == [{"epoch": 1, "loss": 1.0}]
    assert (tmp_path / "r-101.train.jsonl").exists()


@pytest.mark.slow
def test_train_evaluate_and_reload(tmp_path, small_spec, desk_config):
    phantoms = generate_dataset(small_spec, 3, seed=21)
    config = override(desk_config, "optimizer.epochs=2")
    result = train_detector(config, phantoms[:2])
    assert [record["epoch"] for record in result.history] == [1, 2]
    assert all(np.isfinite(record["loss"]) for record in result.history)
    assert result.history[0]["variant"] == "R-50-2.5d"
    assert all(np.isfinite(record["gate_loss"]) for record in result.history)
    trained = result.detector.graph.get_weights()["gate.weights"][:, 0]
    np.testing.assert_array_equal(result.detector.gate.weights, trained)
    path = save_detector(result, tmp_path / "model.json")
    reloaded = load_detector(path)
    first, counts, _ = evaluate_detector(result.detector, phantoms[2:])
    second, _, _ = evaluate_detector(reloaded, phantoms[2:])
    assert counts.lesions == len(phantoms[2].lesions)
    np.testing.assert_array_equal(list(first.values()), list(second.values()))


@pytest.mark.slow
def test_training_is_reproducible(small_spec, desk_config):
    phantoms = generate_dataset(small_spec, 2, seed=5)
    first = train_detector(desk_config, phantoms)
    second = train_detector(desk_config, phantoms)
    assert first.history == second.history


@pytest.mark.slow
def test_multimodal_ablation_row(tmp_path, small_spec, desk_config):
    phantoms = generate_dataset(small_spec, 3, seed=13)
    variants = [("R-50 multi-modal", override(desk_config, "pipeline.multimodal=true"))]
    table = run_ablation(variants, phantoms[:2], phantoms[2:], log_dir=tmp_path, deterministic=True)
    assert table.labels == ["R-50 multi-modal"] and not table.failed
    records = read_json_lines(tmp_path / "r-50_multi-modal.train.jsonl")
    assert len(records) == 1 and records[0]["variant"] == "R-50-2.5d-mm"


@pytest.mark.slow
def test_desk_detector_finds_held_out_lesions():
    config = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk.json")
    subjects = generate_dataset(config.phantom, config.data.subjects, config.seed)
    train, test = split_dataset(subjects, config.data.train_fraction, config.seed)
    assert (len(train), len(test)) == (20, 5)
    first = train_detector(config, train)
    accuracy, counts, _ = evaluate_detector(first.detector, test)
    assert counts.recall >= 0.7
    second = train_detector(config, train)
    assert second.history == first.history
    for name, value in first.detector.graph.get_weights().items():
        np.testing.assert_array_equal(second.detector.graph.get_weights()[name], value)
    again, _, _ = evaluate_detector(second.detector, test)
    np.testing.assert_array_equal(list(again.values()), list(accuracy.values()))
