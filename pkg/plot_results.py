"""Plot training curves and accuracy tables written by hepadet."""
import argparse
import json
from pathlib import Path
from typing import List

import matplotlib.pyplot as plt
import pandas as pd

from hepadet.detection.evaluate import EvalTable
from hepadet.utils.logs import read_json_lines

LOSS_KEYS = ("loss", "rpn_loss", "cls_loss")


def parseargs() -> argparse.Namespace:
    """Parse args for plotter."""
    parser = argparse.ArgumentParser(description="Plot hepadet training logs and accuracy tables.")
    parser.add_argument(
        "kind",
        type=str,
        choices=["loss", "table"],
        help="'loss' for per-epoch training curves, 'table' for a per-class accuracy chart.",
    )
    parser.add_argument(
        "files",
        type=Path,
        nargs="+",
        help="Training logs (*.train.jsonl, train.jsonl) or table files (eval.json, ablation.json).",
    )
    parser.add_argument(
        "--output",
        "-o",
        type=Path,
        default=Path("results-plots"),
        help="Directory the figure is saved to.",
    )
    parser.add_argument("--show", action="store_true", help="Also open the figure in a window.")
    return parser.parse_args()


def load_history(paths: List[Path]) -> pd.DataFrame:
    """Stack per-epoch records from one or more training logs.

    Parameters
    ----------
    paths : List[Path]
        JSON-lines files written during training.
    """
    frames = []
    for path in paths:
        frame = pd.DataFrame(read_json_lines(path))
        if "variant" not in frame:
            frame["variant"] = path.stem
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def plot_loss(history: pd.DataFrame) -> plt.Figure:
    figure, axes = plt.subplots(1, len(LOSS_KEYS), figsize=(4 * len(LOSS_KEYS), 3.5), sharex=True)
    for key, axis in zip(LOSS_KEYS, axes):
        for variant, rows in history.groupby("variant", sort=False):
            axis.plot(rows["epoch"], rows[key], marker="o", label=variant)
        axis.set_title(key.replace("_", " ").title())
        axis.set_xlabel("Epoch")
    axes[0].set_ylabel("Mean loss")
    axes[-1].legend()
    figure.tight_layout()
    return figure


def plot_table(table: EvalTable) -> plt.Figure:
    """Grouped bars, one group per framework row; failed rows are left empty."""
    frame = table.to_frame()
    figure, axis = plt.subplots(figsize=(1.6 * len(frame) + 3, 4))
    frame.plot.bar(ax=axis, rot=20)
    axis.set_ylim(0, 100)
    axis.set_ylabel("Accuracy (%)")
    axis.set_title(f"Per-class accuracy, IoU >= {table.iou_threshold}")
    figure.tight_layout()
    return figure


if __name__ == "__main__":
    args = parseargs()
    if args.kind == "loss":
        figure = plot_loss(load_history(args.files))
        name = "loss-curves.png"
    else:
        with open(args.files[0]) as file:
            figure = plot_table(EvalTable.from_json(json.load(file)))
        name = f"{args.files[0].stem}-accuracy.png"
    args.output.mkdir(parents=True, exist_ok=True)
    figure.savefig(fname=args.output / name)
    print(f"Saved {args.output / name}")
    if args.show:
        plt.show()
