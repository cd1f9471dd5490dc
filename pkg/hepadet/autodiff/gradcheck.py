"""Central-difference verification of analytic gradients."""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from .graph import Graph, backward
from .rng import generator

logger = logging.getLogger(__name__)


@dataclass
class GradCheckResult:
    """Outcome of the check for one parameter."""

    max_rel_error: float
    coords_checked: int
    kinks_skipped: int
    passed: bool


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _snapshot(buffers: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {key: value.copy() for key, value in buffers.items()}


def _restore(graph: Graph, snapshot: Dict[str, np.ndarray]) -> None:
    graph.buffers.clear()
    graph.buffers.update(_snapshot(snapshot))


def finite_diff_check(
    graph: Graph,
    loss_node,
    step: float = 1e-3,
    tol: float = 1e-4,
    feeds: Optional[Mapping] = None,
    mode: Optional[str] = None,
    seed: Optional[int] = None,
    coords: int = 32,
) -> Dict[str, GradCheckResult]:
    """Compare analytic gradients against central differences.

    For every parameter a seeded random subsample of coordinates (all of them
    when the parameter has fewer than ``coords`` entries) is perturbed by
    ``±step`` and ``±step/2``; the two central differences are combined by
    one Richardson step. A coordinate whose perturbation flips a discrete
    decision of a non-smooth op (relu mask, pooling argmax) straddles a kink
    and is skipped; further coordinates are drawn in its place while any
    remain. Batch-norm running statistics are left as they were found.

    Parameters
    ----------
    graph : Graph
        Graph holding the loss.
    loss_node : int or str
        Scalar loss node.
    step : float
        Perturbation size, must be positive.
    tol : float
        Pass threshold on the maximum relative error.
    feeds, mode, seed : optional
        Evaluation settings; default to those of the graph's last run.
    coords : int
        Coordinates to check per parameter.

    Returns
    -------
    Dict[str, GradCheckResult]
        One entry per parameter.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    last = graph.last_run or {}
    feeds = feeds if feeds is not None else last.get("feeds", {})
    mode = mode or last.get("mode", "infer")
    seed = seed if seed is not None else last.get("seed", 0)
    loss_id = graph._resolve(loss_node)
    saved = _snapshot(graph.buffers)

    def evaluate():
        values = graph.run(feeds, targets=[loss_id], mode=mode, seed=seed)
        _restore(graph, saved)
        decisions = {node: sig.copy() for node, sig in graph.decisions.items()}
        return float(values[loss_id]), decisions

    _, baseline = evaluate()
    analytic = backward(graph, loss_id)

    def same_decisions(other) -> bool:
        return all(np.array_equal(baseline[node], other[node]) for node in baseline)

    report = {}
    for name, tensor in graph.parameters.items():
        flat = tensor.array.reshape(-1)
        wanted = min(coords, flat.size)
        order = generator(seed, "gradcheck", name).permutation(flat.size)
        worst, checked, skipped = 0.0, 0, 0
        for index in order:
            if checked >= wanted:
                break
            original = flat[index]
            estimates = []
            kink = False
            for delta in (step, step / 2):
                losses = []
                for sign in (1.0, -1.0):
                    flat[index] = original + sign * delta
                    loss, decisions = evaluate()
                    kink = kink or not same_decisions(decisions)
                    losses.append(loss)
                estimates.append((losses[0] - losses[1]) / (2 * delta))
            flat[index] = original
            if kink:
                skipped += 1
                continue
            numeric = (4 * estimates[1] - estimates[0]) / 3
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[index]), numeric))
            checked += 1
        report[name] = GradCheckResult(worst, checked, skipped, worst < tol)
        logger.debug(
            "Gradient check %s: max rel error %.3g over %d coords (%d kinks skipped).",
            name, worst, checked, skipped,
        )

    graph.run(feeds, targets=[loss_id], mode=mode, seed=seed)
    _restore(graph, saved)
    failed = [name for name, result in report.items() if not result.passed]
    if failed:
        logger.warning("Gradient check failed for %s.", failed)
    return report


def all_passed(report: Mapping[str, GradCheckResult]) -> bool:
    return all(result.passed for result in report.values())
