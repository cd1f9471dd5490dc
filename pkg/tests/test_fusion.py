import numpy as np
import pytest

from hepadet.autodiff import Graph, softmax
from hepadet.detection import RoiBox
from hepadet.errors import ShapeError
from hepadet.models import FeaturePyramid, add_fusion, add_roi_classifier, classify_rois, fuse_pyramid
from hepadet.models.heads import roi_rows
from hepadet.models.pyramid import upsample_factor


def lateral(x, weight, bias):
    return np.einsum("fc,nchw->nfhw", weight[:, :, 0, 0], x) + bias[None, :, None, None]


@pytest.fixture
def two_levels(rng):
    pyramid = FeaturePyramid([("a", rng.normal(size=(2, 2, 4, 4))), ("b", rng.normal(size=(2, 3, 2, 2)))])
    laterals = {
        "a": (rng.normal(size=(5, 2, 1, 1)), rng.normal(size=5)),
        "b": (rng.normal(size=(5, 3, 1, 1)), rng.normal(size=5)),
    }
    return pyramid, laterals


def test_top_down_fusion(two_levels):
    pyramid, laterals = two_levels
    fused = fuse_pyramid(pyramid, laterals)
    deep = lateral(pyramid["b"], *laterals["b"])
    np.testing.assert_allclose(fused["b"], deep)
    up = deep.repeat(2, axis=2).repeat(2, axis=3)
    np.testing.assert_allclose(fused["a"], lateral(pyramid["a"], *laterals["a"]) + up)
    assert fused.names == ["a", "b"]


def test_lateral_only_fusion(two_levels):
    pyramid, laterals = two_levels
    flat = fuse_pyramid(pyramid, laterals, top_down=False)
    np.testing.assert_allclose(flat["a"], lateral(pyramid["a"], *laterals["a"]))


def test_fusion_rejects_bad_pyramids(two_levels):
    _, laterals = two_levels
    with pytest.raises(ShapeError):
        fuse_pyramid(FeaturePyramid([("a", np.zeros((1, 2, 4, 4)))]), laterals)
    with pytest.raises(ShapeError):
        upsample_factor((4, 4), (3, 3))
    with pytest.raises(ShapeError):
        upsample_factor((4, 4), (4, 2))
    assert upsample_factor((8, 6), (4, 3)) == 2


def test_graph_fusion_matches_eager(two_levels):
    pyramid, _ = two_levels
    g = Graph("fusion", seed=3)
    levels = [("a", g.input("a"), 2, (4, 4)), ("b", g.input("b"), 3, (2, 2))]
    nodes = add_fusion(g, levels, channels=5)
    g.validate()
    g.run({"a": pyramid["a"], "b": pyramid["b"]}, targets=list(nodes.values()))
    weights = g.get_weights()
    laterals = {name: (weights[f"fusion.{name}.weight"], weights[f"fusion.{name}.bias"]) for name in ("a", "b")}
    eager = fuse_pyramid(pyramid, laterals)
    for name in ("a", "b"):
        np.testing.assert_allclose(g.value(f"fused.{name}"), eager[name])


def test_roi_head_matches_graph(rng):
    g = Graph("head", seed=4)
    logits = add_roi_classifier(g, g.input("features"), g.input("rois"), channels=3, pool=2, hidden=6, stride=2.0)
    features = rng.normal(size=(1, 3, 8, 8))
    rois = [RoiBox(0, 0, 8, 8, score=0.9), RoiBox(4, 2, 14, 12, score=0.4)]
    g.run({"features": features, "rois": roi_rows(rois)}, targets=[logits], mode="infer")
    expected = softmax(g.value("cls.logits"))
    detections = classify_rois(features, rois, g.get_weights(), pool_size=2, stride=2.0, source_phase="arterial")
    assert [d.box for d in detections] == rois
    for detection, row in zip(detections, expected):
        np.testing.assert_allclose(detection.class_probs, row)
        assert detection.source_phase == "arterial"


def test_roi_rows():
    rows = roi_rows([RoiBox(1, 2, 3, 4), (5, 6, 7, 8)], batch_index=1)
    np.testing.assert_array_equal(rows, [[1, 1, 2, 3, 4], [1, 5, 6, 7, 8]])
    assert roi_rows([]).shape == (0, 5)
