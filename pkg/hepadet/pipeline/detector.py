"""The full detection graph for one framework variant."""

import dataclasses
import logging
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from hepadet.autodiff.graph import Graph
from hepadet.config import RunConfig
from hepadet.detection.anchors import anchor_array
from hepadet.detection.gate import FEATURE_SIZE, GateModel
from hepadet.detection.proposal import add_rpn_head
from hepadet.errors import ConfigError
from hepadet.models.backbone import LEVELS, FeaturePyramid, add_backbone, shape_trace
from hepadet.models.heads import add_roi_classifier
from hepadet.models.pyramid import add_fusion
from hepadet.models.relation import add_relation
from hepadet.preprocess.slab import to_2d

logger = logging.getLogger(__name__)

LOSS = "loss"
RPN_LOSS = "loss.rpn"
CLS_LOSS = "loss.cls"
GATE_LOSS = "loss.gate"


def slab_input(phase: str) -> str:
    return f"slab.{phase}"


class Detector:
    """Backbone per phase, pyramid fusion, optional relation, RPN and ROI head.

    Graph inputs are ``slab.<phase>`` (``[N, depth, S, S]``), ``rpn_targets``
    (``[N, A]``), ``rois`` (``[R, 5]``) and ``roi_labels`` (``[R]``); a gated
    detector also reads ``gate_features`` (``[R, 18]``, standardised) and
    ``gate_targets`` (``[R, 1]``). The scalar training loss, labelled ``loss``,
    sums the objectness, gate and classification terms.

    Parameters
    ----------
    config : RunConfig
        Run configuration; only the model sections are read.
    """

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.net = config.model_net()
        self.pipeline = config.pipeline
        self.phases = self.pipeline.phases
        self.reference = config.relation.reference_phase if self.pipeline.multimodal else self.pipeline.phase
        self.gate = GateModel()
        self.graph = Graph(name=self.variant_name, seed=config.seed)

        trace = {row.name: row for row in shape_trace(self.net)}
        self.level_shapes: List[Tuple[int, int]] = []
        level_channels: Dict[str, int] = {}
        for index, level in enumerate(LEVELS, start=1):
            row = trace[f"Block{index}"]
            self.level_shapes.append((row.height, row.width))
            level_channels[level] = row.depth_extent * row.channels
        self.image_size = (self.net.input_size, self.net.input_size)
        strides = tuple(self.net.input_size // h for h, _ in self.level_shapes)
        if strides != tuple(config.anchors.strides):
            raise ConfigError(f"anchor strides {config.anchors.strides} do not match the pyramid strides {strides}")
        self.anchors = anchor_array(self.level_shapes, config.anchors)
        self._build(level_channels)

    @property
    def variant_name(self) -> str:
        suffix = "-mm" if self.pipeline.multimodal else ""
        return f"R-{self.net.depth}-{self.pipeline.input_mode}{suffix}"

    def _build(self, level_channels: Mapping[str, int]) -> None:
        g = self.graph
        channels = self.pipeline.fused_channels
        fused: Dict[str, Dict[str, int]] = {}
        for phase in self.phases:
            scope = f"{phase}/"
            outputs = add_backbone(g, self.net, g.input(slab_input(phase)), scope=scope)
            levels = [
                (name, outputs[name], level_channels[name], shape) for name, shape in zip(LEVELS, self.level_shapes)
            ]
            fused[phase] = add_fusion(g, levels, channels, top_down=self.pipeline.fusion, scope=scope)

        if self.pipeline.multimodal:
            others = [p for p in self.phases if p != self.reference]
            merged = {
                level: add_relation(
                    g,
                    level,
                    fused[self.reference][level],
                    [fused[p][level] for p in others],
                    channels,
                    self.config.relation,
                )
                for level in LEVELS
            }
        else:
            merged = fused[self.reference]
        self.level_labels = [g.nodes[merged[level]]["label"] for level in LEVELS]

        heads = [(merged[level], shape) for level, shape in zip(LEVELS, self.level_shapes)]
        rpn = add_rpn_head(g, heads, channels, self.config.anchors.per_cell)
        rpn_loss = g.apply("sigmoid_bce", [rpn, g.input("rpn_targets")], label=RPN_LOSS)
        self.roi_stride = self.net.input_size / self.level_shapes[0][0]
        logits = add_roi_classifier(
            g,
            merged[LEVELS[0]],
            g.input("rois"),
            channels,
            self.pipeline.pool,
            self.pipeline.hidden,
            self.roi_stride,
            self.pipeline.dropout,
        )
        cls_loss = g.apply("softmax_ce", [logits, g.input("roi_labels")], label=CLS_LOSS)
        total = g.apply("add", [rpn_loss, cls_loss], label=None if self.pipeline.use_gate else LOSS)
        if self.pipeline.use_gate:
            weights = g.parameter("gate.weights", np.zeros((FEATURE_SIZE, 1)))
            bias = g.parameter("gate.bias", np.zeros(1))
            gate_logits = g.apply("dense", [g.input("gate_features"), weights, bias])
            gate_loss = g.apply("sigmoid_bce", [gate_logits, g.input("gate_targets")], label=GATE_LOSS)
            g.apply("add", [total, gate_loss], label=LOSS)
        g.validate()
        logger.info(
            "Built %s: %d nodes, %d parameters, %d anchors.",
            self.variant_name,
            g.number_of_nodes(),
            g.parameter_count(),
            len(self.anchors),
        )

    def slab_feeds(self, slabs: Sequence[Mapping[str, np.ndarray]]) -> Dict[str, np.ndarray]:
        """Stack per-sample phase channels into the ``slab.<phase>`` feeds."""
        feeds = {}
        for phase in self.phases:
            batch = np.stack([np.asarray(sample[phase], dtype=np.float64) for sample in slabs])
            if self.pipeline.input_mode == "2d" and batch.shape[1] != 1:
                batch = to_2d(batch)
            feeds[slab_input(phase)] = batch
        return feeds

    def fused_pyramid(self, batch_index: int = 0) -> FeaturePyramid:
        """The merged pyramid of one batch item from the latest run."""
        item = slice(batch_index, batch_index + 1)
        levels = [(level, self.graph.value(label)[item]) for level, label in zip(LEVELS, self.level_labels)]
        return FeaturePyramid(levels)

    def head_weights(self) -> Dict[str, np.ndarray]:
        weights = self.graph.get_weights()
        return {name: value for name, value in weights.items() if name.startswith(("rpn.", "cls."))}

    def set_gate(self, gate: GateModel) -> None:
        """Use ``gate`` for inference and copy its logistic weights into the graph."""
        self.gate = gate
        if self.pipeline.use_gate:
            self.graph.set_weights(
                {"gate.weights": np.reshape(gate.weights, (FEATURE_SIZE, 1)), "gate.bias": np.array([gate.bias])}
            )

    def trained_gate(self) -> GateModel:
        """The current gate with the logistic weights held by the graph."""
        if not self.pipeline.use_gate:
            return self.gate
        weights = self.graph.get_weights()
        return dataclasses.replace(
            self.gate, weights=weights["gate.weights"].reshape(-1).copy(), bias=float(weights["gate.bias"][0])
        )
