import numpy as np

from hepadet.detection import Detection, GroundTruthBox, RoiBox
from hepadet.pipeline.overlay import draw_box, draw_text, render_overlay, upscale


def test_upscale():
    image = np.array([[1, 2], [3, 4]], dtype=np.uint8)
    np.testing.assert_array_equal(upscale(image, 2)[:, :2], [[1, 1], [1, 1], [3, 3], [3, 3]])


def test_draw_box_outlines_only():
    image = np.zeros((10, 10), dtype=np.uint8)
    draw_box(image, (2, 2, 6, 6))
    assert image[2, 2:6].tolist() == [255] * 4
    assert image[5, 2:6].tolist() == [255] * 4
    assert image[3:5, 3:5].sum() == 0
    dotted = np.zeros((10, 10), dtype=np.uint8)
    draw_box(dotted, (0, 0, 20, 20), dotted=True)
    assert dotted[0, :9].tolist() == [255, 0] * 4 + [255]
    assert dotted[9, 0] == 255


def test_draw_text_is_clipped():
    image = np.full((6, 8), 100, dtype=np.uint8)
    draw_text(image, "HCC 0.91", 1, 1)
    assert image.max() == 255
    assert image[1:6, 1:].min() == 0


def test_render_overlay():
    image = np.full((16, 16), 50, dtype=np.uint8)
    probs = np.array([0.1, 0.1, 0.7, 0.1])
    detection = Detection(RoiBox(2, 2, 8, 8, score=0.9), probs)
    canvas = render_overlay(image, [detection], [GroundTruthBox(9, 9, 14, 14, 2)], factor=4)
    assert canvas.shape == (64, 64) and canvas.dtype == np.uint8
    assert canvas[8, 20] == 255
    assert canvas[36, 36] == 255 and canvas[36, 37] == 50
    assert image.max() == 50
