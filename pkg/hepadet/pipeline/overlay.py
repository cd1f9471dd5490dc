"""Burn boxes and class tags into 8-bit slice renderings."""

from typing import Sequence, Tuple

import numpy as np

from hepadet.detection.evaluate import Detection, GroundTruthBox

# 3x5 bitmaps, one string per row.
GLYPHS = {
    "C": ("###", "#..", "#..", "#..", "###"),
    "E": ("###", "#..", "##.", "#..", "###"),
    "H": ("#.#", "#.#", "###", "#.#", "#.#"),
    "M": ("#.#", "###", "###", "#.#", "#.#"),
    "S": ("###", "#..", "###", "..#", "###"),
    "Y": ("#.#", "#.#", ".#.", ".#.", ".#."),
    "0": ("###", "#.#", "#.#", "#.#", "###"),
    "1": (".#.", "##.", ".#.", ".#.", "###"),
    "2": ("###", "..#", "###", "#..", "###"),
    "3": ("###", "..#", ".##", "..#", "###"),
    "4": ("#.#", "#.#", "###", "..#", "..#"),
    "5": ("###", "#..", "###", "..#", "###"),
    "6": ("###", "#..", "###", "#.#", "###"),
    "7": ("###", "..#", "..#", ".#.", ".#."),
    "8": ("###", "#.#", "###", "#.#", "###"),
    "9": ("###", "#.#", "###", "..#", "###"),
    ".": ("...", "...", "...", "...", ".#."),
    " ": ("...", "...", "...", "...", "..."),
}
TAGS = {"cyst": "CYS", "hemangioma": "HEM", "hcc": "HCC"}
GLYPH_HEIGHT = 5
GLYPH_WIDTH = 3

Box = Tuple[float, float, float, float]


def upscale(image: np.ndarray, factor: int) -> np.ndarray:
    return np.asarray(image, dtype=np.uint8).repeat(factor, axis=0).repeat(factor, axis=1)


def draw_box(image: np.ndarray, box: Box, value: int = 255, dotted: bool = False) -> None:
    """Outline ``box`` (pixel coordinates of ``image``) in place."""
    height, width = image.shape
    x0, y0 = int(np.clip(np.floor(box[0]), 0, width - 1)), int(np.clip(np.floor(box[1]), 0, height - 1))
    x1, y1 = int(np.clip(np.ceil(box[2]) - 1, 0, width - 1)), int(np.clip(np.ceil(box[3]) - 1, 0, height - 1))
    step = 2 if dotted else 1
    image[y0, x0 : x1 + 1 : step] = value
    image[y1, x0 : x1 + 1 : step] = value
    image[y0 : y1 + 1 : step, x0] = value
    image[y0 : y1 + 1 : step, x1] = value


def draw_text(image: np.ndarray, text: str, x: int, y: int, value: int = 255) -> None:
    """Write ``text`` with its top-left corner at ``(x, y)`` on a dark backing; clipped at the borders."""
    height, width = image.shape
    span = len(text) * (GLYPH_WIDTH + 1) + 1
    image[max(y - 1, 0) : min(y + GLYPH_HEIGHT + 1, height), max(x - 1, 0) : min(x + span - 1, width)] = 0
    for position, char in enumerate(text.upper()):
        rows = GLYPHS.get(char, GLYPHS[" "])
        left = x + position * (GLYPH_WIDTH + 1)
        for r, row in enumerate(rows):
            for c, cell in enumerate(row):
                py, px = y + r, left + c
                if cell == "#" and 0 <= py < height and 0 <= px < width:
                    image[py, px] = value


def render_overlay(
    image: np.ndarray,
    detections: Sequence[Detection],
    ground_truth: Sequence[GroundTruthBox] = (),
    factor: int = 4,
) -> np.ndarray:
    """Upscaled slice with ground truth dotted and detections tagged by class and score."""
    canvas = upscale(image, factor)
    for gt in ground_truth:
        draw_box(canvas, tuple(c * factor for c in gt.coords), value=255, dotted=True)
    for detection in detections:
        box = tuple(c * factor for c in detection.box.coords)
        draw_box(canvas, box, value=255)
        tag = f"{TAGS[detection.class_name]} {detection.score:.2f}"
        top = int(box[1]) - GLYPH_HEIGHT - 2
        draw_text(canvas, tag, int(box[0]) + 1, top if top >= 1 else int(box[3]) + 2)
    return canvas
