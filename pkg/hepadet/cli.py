"""Command-line entry point.

Every subcommand reads an optional JSON run config, applies ``--set``
overrides and writes ``config.snapshot.json`` next to its outputs.

Exit codes: 0 success, 1 usage, 2 invalid config, contract or dataset,
3 any other failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, NoReturn, Optional, Sequence

import numpy as np

from hepadet.autodiff.checkpoint import load_checkpoint
from hepadet.config import RunConfig, load_config, write_snapshot
from hepadet.detection.evaluate import EvalTable
from hepadet.errors import ConfigError, ContractError, DatasetError, HepadetError
from hepadet.models.backbone import (
    compare_to_contract,
    concat_shape,
    default_contract,
    format_trace,
    load_contract,
    shape_trace,
)
from hepadet.models.relation import phase_change_map
from hepadet.phantoms.dataset import generate_dataset, read_manifest, read_subjects, split_dataset, write_dataset
from hepadet.phantoms.generator import PhaseVolumeSet
from hepadet.pipeline.ablation import ablation_configs, run_ablation
from hepadet.pipeline.infer import evaluate_detector, infer_subjects
from hepadet.pipeline.train import load_detector, save_detector, train_detector
from hepadet.preprocess.slab import assemble_slab
from hepadet.preprocess.volume import write_pgm
from hepadet.preprocess.window import window_to_u8
from hepadet.utils.logs import ResultsLogger, init_logs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_RUNTIME = 3

LOG_NAME = "hepadet.log"
CHECKPOINT_NAME = "checkpoint.json"


class ArgumentParser(argparse.ArgumentParser):
    """Exits with the usage code instead of argparse's default 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def common_arguments() -> argparse.ArgumentParser:
    parent = ArgumentParser(add_help=False)
    parent.add_argument("--config", "-c", type=Path, default=None, help="JSON run config.")
    parent.add_argument("--seed", type=int, default=None, help="Overrides the config seed.")
    parent.add_argument("--out", "-o", type=Path, default=Path("out"), help="Output directory.")
    parent.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Config override; the value is parsed as JSON when possible. Repeatable.",
    )
    parent.add_argument(
        "--deterministic",
        action="store_true",
        help="Drop timestamps from logs and results so reruns are byte-identical.",
    )
    parent.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Level of the run log written to the output directory.",
    )
    return parent


def dataset_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", "-d", type=Path, default=None, help="Phantom dataset directory.")


def checkpoint_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", "-k", type=Path, required=True, help="Checkpoint manifest from 'train'.")


def parseargs(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse the command line."""
    parent = common_arguments()
    parser = ArgumentParser(prog="hepadet", description="Liver lesion detection on multi-phase CT phantoms.")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=ArgumentParser)
    commands.required = True

    phantom = commands.add_parser("phantom", parents=[parent], help="Generate a phantom dataset.")
    phantom.add_argument("--count", "-n", type=int, default=None, help="Subjects to generate (default data.subjects).")

    preprocess = commands.add_parser(
        "preprocess", parents=[parent], help="Export windowed slices, slabs and phase-change energy maps."
    )
    dataset_arguments(preprocess)

    trace = commands.add_parser("trace", parents=[parent], help="Print the backbone shape table and check it.")
    trace.add_argument("--contract", type=Path, default=None, help="Contract file (default: built-in for the depth).")

    train = commands.add_parser("train", parents=[parent], help="Train a detector.")
    dataset_arguments(train)
    train.add_argument("--split", choices=["train", "all"], default="train", help="Subjects to train on.")

    evaluate = commands.add_parser("eval", parents=[parent], help="Score a checkpoint on a dataset split.")
    dataset_arguments(evaluate)
    checkpoint_arguments(evaluate)
    evaluate.add_argument("--split", choices=["test", "train", "all"], default="test", help="Subjects to score.")

    infer = commands.add_parser("infer", parents=[parent], help="Write detections and overlays.")
    dataset_arguments(infer)
    checkpoint_arguments(infer)
    infer.add_argument("--all-slices", action="store_true", help="Run every slice, not just the evaluation slices.")
    infer.add_argument("--subject", action="append", default=None, help="Restrict to a subject id. Repeatable.")

    ablation = commands.add_parser("ablation", parents=[parent], help="Train and score the six framework variants.")
    dataset_arguments(ablation)

    args = parser.parse_args(argv)
    if getattr(args, "count", None) is not None and args.count < 0:
        parser.error("--count must be non-negative")
    return args


def resolve_dataset(args: argparse.Namespace, config: RunConfig) -> Path:
    dataset = args.dataset or config.data.dataset
    if dataset is None:
        raise ConfigError("no dataset given; pass --dataset or set data.dataset")
    return Path(dataset)


def load_subjects(directory: Path, subject_ids: Optional[Sequence[str]] = None) -> List[PhaseVolumeSet]:
    manifest = read_manifest(directory)
    subjects = read_subjects(manifest, subject_ids)
    logger.info("Loaded %d subjects from %s.", len(subjects), directory)
    return subjects


def select_split(subjects: List[PhaseVolumeSet], split: str, config: RunConfig) -> List[PhaseVolumeSet]:
    if split == "all":
        return subjects
    train, test = split_dataset(subjects, config.data.train_fraction, config.seed)
    return train if split == "train" else test


def cmd_phantom(args: argparse.Namespace, config: RunConfig) -> int:
    count = config.data.subjects if args.count is None else args.count
    phantoms = generate_dataset(config.phantom, count, config.seed)
    manifest = write_dataset(phantoms, args.out, config.seed, config.phantom)
    lesions = sum(len(p.lesions) for p in phantoms)
    print(f"Wrote {count} subjects with {lesions} lesions; manifest {manifest}")
    return EXIT_OK


def cmd_preprocess(args: argparse.Namespace, config: RunConfig) -> int:
    subjects = load_subjects(resolve_dataset(args, config))
    size = config.net.input_size
    for name in ("slices", "slabs", "energy"):
        (args.out / name).mkdir(parents=True, exist_ok=True)
    written = 0
    for phantom in subjects:
        for index in sorted({lesion.center_slice for lesion in phantom.lesions}):
            stem = f"{phantom.subject_id}_s{index:03d}"
            slabs = {}
            for phase, volume in phantom.volumes.items():
                image = window_to_u8(volume.voxels[index], config.window)
                write_pgm(image, args.out / "slices" / f"{stem}_{phase}.pgm")
                slabs[phase] = assemble_slab(volume, index, config.window, size)
            np.savez(args.out / "slabs" / f"{stem}.npz", **{phase: slab.channels for phase, slab in slabs.items()})
            energy = phase_change_map(slabs["arterial"].center, slabs["delayed"].center)
            peak = energy.max()
            scaled = energy / peak if peak > 0 else energy
            write_pgm(np.rint(scaled * 255).astype(np.uint8), args.out / "energy" / f"{stem}.pgm")
            written += 1
    print(f"Exported {written} lesion centre slices from {len(subjects)} subjects to {args.out}")
    return EXIT_OK


def cmd_trace(args: argparse.Namespace, config: RunConfig) -> int:
    net = config.net
    rows = shape_trace(net)
    concat = concat_shape(net)
    print(format_trace(net, rows, concat))
    contract = load_contract(args.contract) if args.contract is not None else default_contract(net.depth)
    diff = compare_to_contract(rows, concat, contract)
    if diff:
        raise ContractError(f"trace of R-{net.depth} disagrees with its contract", diff)
    print(f"Trace matches the R-{net.depth} contract.")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    subjects = select_split(load_subjects(resolve_dataset(args, config)), args.split, config)
    with ResultsLogger(args.out / "train.jsonl", args.deterministic, name="train") as results:
        result = train_detector(config, subjects, results)
    path = save_detector(result, args.out / CHECKPOINT_NAME)
    print(f"Trained {result.detector.variant_name} on {len(subjects)} subjects: final loss {result.final_loss:.6f}")
    print(f"Checkpoint {path}")
    return EXIT_OK


def checkpoint_config(args: argparse.Namespace) -> RunConfig:
    """The checkpoint's training config with this command's overrides."""
    trained = load_checkpoint(args.checkpoint).metadata.get("config")
    if trained is None:
        raise DatasetError(f"checkpoint {args.checkpoint} carries no config")
    return load_config(args.config, args.overrides, args.seed, base=trained)


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    detector = load_detector(args.checkpoint, config)
    subjects = select_split(load_subjects(resolve_dataset(args, config)), args.split, config)
    accuracy, counts, _ = evaluate_detector(detector, subjects)
    table = EvalTable(config.thresholds.eval_iou)
    table.add_row(detector.variant_name, accuracy, counts)
    table.write(args.out, stem="eval")
    print(table.to_text(), end="")
    print(
        f"Lesion recall {counts.recall:.4f} ({counts.lesions} lesions, {counts.false_positives} false positives)"
    )
    return EXIT_OK


def cmd_infer(args: argparse.Namespace, config: RunConfig) -> int:
    detector = load_detector(args.checkpoint, config)
    subjects = load_subjects(resolve_dataset(args, config), args.subject)
    total = infer_subjects(detector, subjects, args.out, args.deterministic, args.all_slices)
    print(f"{total} detections on {len(subjects)} subjects written to {args.out}")
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace, config: RunConfig) -> int:
    variants = ablation_configs(config)
    if args.dataset is not None or config.data.dataset is not None:
        subjects = load_subjects(resolve_dataset(args, config))
    else:
        subjects = generate_dataset(config.phantom, config.data.subjects, config.seed)
    train, test = split_dataset(subjects, config.data.train_fraction, config.seed)
    table = run_ablation(variants, train, test, config.thresholds.eval_iou, args.out / "logs", args.deterministic)
    table.write(args.out, stem="ablation")
    print(table.to_text(), end="")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "phantom": cmd_phantom,
    "preprocess": cmd_preprocess,
    "trace": cmd_trace,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "ablation": cmd_ablation,
}


def run(args: argparse.Namespace) -> int:
    if args.command in ("eval", "infer"):
        config = checkpoint_config(args)
    else:
        config = load_config(args.config, args.overrides, args.seed)
    config.validate_paths()
    args.out.mkdir(parents=True, exist_ok=True)
    init_logs(args.out / LOG_NAME, getattr(logging, args.log_level), args.deterministic)
    logger.info("Running %s with seed %d.", args.command, config.seed)
    write_snapshot(config, args.out)
    return COMMANDS[args.command](args, config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run a subcommand and map failures to exit codes."""
    args = parseargs(argv)
    try:
        return run(args)
    except ContractError as err:
        print(f"hepadet {args.command}: {err}", file=sys.stderr)
        for line in err.diff:
            print(f"  {line}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, DatasetError) as err:
        print(f"hepadet {args.command}: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (HepadetError, OSError) as err:
        logger.exception("%s failed.", args.command)
        print(f"hepadet {args.command}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
