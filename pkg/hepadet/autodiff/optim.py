"""Stochastic gradient descent with classic momentum."""

import logging
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from hepadet.errors import ShapeError

from .graph import Graph

logger = logging.getLogger(__name__)

Arrays = Dict[str, np.ndarray]


def sgd_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    state: Optional[Mapping[str, np.ndarray]] = None,
) -> Tuple[Arrays, Arrays]:
    """One momentum step: ``v = momentum * v + g``, ``p = p - lr * v``.

    Parameters
    ----------
    params, grads : Mapping[str, numpy.ndarray]
        Parameters and their gradients, matched by name.
    lr : float
        Learning rate, must be positive.
    momentum : float
        Velocity decay in [0, 1).
    state : Mapping[str, numpy.ndarray], optional
        Velocities from the previous step; zeros when absent.

    Returns
    -------
    Tuple[Dict, Dict]
        New parameters and new velocities. The inputs are not modified.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state = state or {}
    new_params, new_state = {}, {}
    for name, param in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != np.shape(param):
            raise ShapeError(f"gradient of {name} has shape {grad.shape}, parameter {np.shape(param)}")
        velocity = momentum * state.get(name, np.zeros_like(grad)) + grad
        new_state[name] = velocity
        new_params[name] = param - lr * velocity
    return new_params, new_state


class SGD:
    """Applies :func:`sgd_step` to the parameters of a graph.

    Parameters
    ----------
    graph : Graph
        Graph whose parameters are trained.
    lr : float
        Learning rate.
    momentum : float
        Momentum coefficient.
    clip_norm : float, optional
        Rescale the whole gradient when its global L2 norm exceeds this.
    """

    def __init__(self, graph: Graph, lr: float, momentum: float = 0.9, clip_norm: Optional[float] = None) -> None:
        self.graph = graph
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.state: Arrays = {}

    def step(self, grads: Mapping[str, np.ndarray]) -> float:
        """Update the graph in place and return the gradient norm."""
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / norm
            grads = {name: g * factor for name, g in grads.items()}
        params, self.state = sgd_step(self.graph.get_weights(), grads, self.lr, self.momentum, self.state)
        self.graph.set_weights(params)
        return norm
