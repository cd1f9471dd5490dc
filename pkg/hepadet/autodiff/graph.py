"""Define-then-run computation graph with reverse-mode gradients."""

import logging
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import networkx as nx
import numpy as np

from hepadet.errors import NonScalarLossError, ShapeError

from .ops import OPS, RunContext
from .rng import fan_in_uniform
from .tensor import Tensor

logger = logging.getLogger(__name__)

LEAF_OPS = ("input", "param")


class Graph(nx.DiGraph):
    """A computation graph whose nodes are op records.

    Node ids are consecutive integers handed out in creation order, so the
    id order is a topological order: an op can only consume nodes that
    already exist. Each node stores ``op``, ``inputs`` (ordered ids),
    ``attrs`` and an optional ``label``.

    Parameters
    ----------
    name : str
        A name for logging.
    seed : int
        Seed for parameter initialisation helpers.
    """

    def __init__(self, name: str = "graph", seed: int = 0) -> None:
        super().__init__()
        self.name = name
        self.seed = seed
        self.parameters: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._param_nodes: Dict[str, int] = {}
        self._input_nodes: Dict[str, int] = {}
        self._labels: Dict[str, int] = {}
        self.values: Dict[int, np.ndarray] = {}
        self.caches: Dict[int, Any] = {}
        self.decisions: Dict[int, np.ndarray] = {}
        self.last_run: Optional[Dict[str, Any]] = None

    # Construction.

    def _new_node(self, op: str, inputs: Sequence[int] = (), label: Optional[str] = None, **attrs) -> int:
        node = self.number_of_nodes()
        for parent in inputs:
            if parent not in self:
                raise KeyError(f"node {parent} does not exist in graph {self.name}")
        self.add_node(node, op=op, inputs=tuple(inputs), attrs=attrs, label=label)
        for slot, parent in enumerate(inputs):
            self.add_edge(parent, node, slot=slot)
        if label is not None:
            self._labels[label] = node
        return node

    def input(self, name: str) -> int:
        """Declare a fed input; feeding by ``name`` at run time."""
        if name in self._input_nodes:
            return self._input_nodes[name]
        node = self._new_node("input", label=name, name=name)
        self._input_nodes[name] = node
        return node

    def parameter(self, name: str, value=None, shape: Sequence[int] = None, fan_in: int = None) -> int:
        """Declare (or fetch) a named trainable parameter.

        A repeated name returns the existing node, which is how weights are
        shared between branches. New parameters take ``value`` when given,
        else fan-in scaled uniform noise over ``shape``.
        """
        if name in self._param_nodes:
            return self._param_nodes[name]
        if value is None:
            if shape is None:
                raise ValueError(f"parameter {name} needs a value or a shape")
            value = fan_in_uniform(tuple(shape), fan_in or 1, self.seed, name)
        self.parameters[name] = Tensor(value, requires_grad=True)
        node = self._new_node("param", label=name, name=name)
        self._param_nodes[name] = node
        return node

    def apply(self, op: str, inputs: Sequence[int], label: Optional[str] = None, **attrs) -> int:
        """Add an op node consuming ``inputs``."""
        if op not in OPS:
            raise KeyError(f"unknown op {op!r}")
        return self._new_node(op, inputs, label=label, **attrs)

    def node_id(self, label: str) -> int:
        return self._labels[label]

    def has_label(self, label: str) -> bool:
        return label in self._labels

    def param_node(self, name: str) -> int:
        return self._param_nodes[name]

    @property
    def input_names(self) -> List[str]:
        return list(self._input_nodes)

    def validate(self) -> None:
        """Check acyclicity, topological ids and parameter use."""
        if not nx.is_directed_acyclic_graph(self):
            raise ValueError(f"graph {self.name} has a cycle")
        for node, data in self.nodes(data=True):
            if any(parent >= node for parent in data["inputs"]):
                raise ValueError(f"node {node} consumes a later node")
        unused = [name for name, node in self._param_nodes.items() if self.out_degree(node) == 0]
        if unused:
            raise ValueError(f"parameters never used: {unused}")

    # Evaluation.

    def _required(self, targets: Optional[Iterable[int]]) -> List[int]:
        if targets is None:
            return list(range(self.number_of_nodes()))
        needed = set()
        for target in targets:
            needed.add(target)
            needed |= nx.ancestors(self, target)
        return sorted(needed)

    def run(
        self,
        feeds: Mapping[str, Any],
        targets: Optional[Sequence] = None,
        mode: str = "infer",
        seed: int = 0,
        reuse: bool = False,
    ) -> Dict[int, np.ndarray]:
        """Evaluate the graph.

        Parameters
        ----------
        feeds : Mapping[str, array_like]
            Values for the input nodes that the targets depend on.
        targets : sequence of int or str, optional
            Node ids or labels to compute; all nodes when omitted.
        mode : "train" or "infer"
        seed : int
            Seed for stochastic ops. Dropout streams are keyed by node id.
        reuse : bool
            Keep values computed by the previous run instead of recomputing
            them (the feeds must not have changed).

        Returns
        -------
        dict
            Node id to value for every evaluated node.
        """
        ctx = RunContext(mode=mode, seed=seed, buffers=self.buffers)
        target_ids = None if targets is None else [self._resolve(t) for t in targets]
        if not reuse:
            self.values, self.caches, self.decisions = {}, {}, {}
        for node in self._required(target_ids):
            if node in self.values:
                continue
            data = self.nodes[node]
            op = data["op"]
            if op == "input":
                name = data["attrs"]["name"]
                if name not in feeds:
                    raise KeyError(f"input {name!r} was not fed")
                self.values[node] = np.asarray(feeds[name], dtype=np.float64)
                continue
            if op == "param":
                self.values[node] = self.parameters[data["attrs"]["name"]].array
                continue
            kernel = OPS[op]
            ctx.node = node
            inputs = [self.values[parent] for parent in data["inputs"]]
            try:
                out, cache = kernel.forward(inputs, ctx, **data["attrs"])
            except ShapeError as err:
                raise ShapeError(f"{op} node {node} ({data['label']}): {err}") from err
            self.values[node] = out
            self.caches[node] = cache
            if kernel.nonsmooth:
                self.decisions[node] = kernel.signature(cache)
        self.last_run = {"feeds": dict(feeds), "targets": target_ids, "mode": mode, "seed": seed}
        return self.values

    def value(self, target) -> np.ndarray:
        return self.values[self._resolve(target)]

    def _resolve(self, target) -> int:
        if isinstance(target, str):
            return self._labels[target]
        return int(target)

    # Parameters.

    def get_weights(self) -> Dict[str, np.ndarray]:
        return {name: tensor.array for name, tensor in self.parameters.items()}

    def set_weights(self, weights: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Overwrite parameter values by name."""
        for name, value in weights.items():
            if name not in self.parameters:
                if strict:
                    raise KeyError(f"unknown parameter {name}")
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.parameters[name].shape:
                raise ShapeError(
                    f"parameter {name} has shape {self.parameters[name].shape}, got {value.shape}"
                )
            self.parameters[name].array = value.copy()

    def parameter_count(self) -> int:
        return int(sum(tensor.size for tensor in self.parameters.values()))


def backward(graph: Graph, loss_node) -> Dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar node.

    Uses the values and caches left by the latest :meth:`Graph.run`.

    Parameters
    ----------
    graph : Graph
        The graph, already evaluated up to ``loss_node``.
    loss_node : int or str
        Id or label of the scalar loss.

    Returns
    -------
    Dict[str, numpy.ndarray]
        Gradient for every parameter; zeros for parameters the loss does not
        depend on.
    """
    loss_id = graph._resolve(loss_node)
    if loss_id not in graph.values:
        raise KeyError(f"node {loss_id} has not been evaluated")
    loss_value = graph.values[loss_id]
    if loss_value.size != 1:
        raise NonScalarLossError(f"loss node {loss_id} has shape {loss_value.shape}")

    grads: Dict[int, np.ndarray] = {loss_id: np.ones_like(loss_value)}
    order = sorted(nx.ancestors(graph, loss_id) | {loss_id}, reverse=True)
    for node in order:
        if node not in grads:
            continue
        data = graph.nodes[node]
        if data["op"] in LEAF_OPS:
            continue
        input_grads = OPS[data["op"]].backward(grads[node], graph.caches[node], **data["attrs"])
        for parent, grad in zip(data["inputs"], input_grads):
            if grad is None:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + grad
            else:
                grads[parent] = grad

    result = {}
    for name, node in graph._param_nodes.items():
        tensor = graph.parameters[name]
        grad = grads.get(node)
        result[name] = np.zeros(tensor.shape) if grad is None else np.asarray(grad).reshape(tensor.shape)
    logger.debug("Backward through %d nodes of %s.", len(order), graph.name)
    return result
