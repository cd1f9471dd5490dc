"""Draw the backbone stage graph with the traced feature size of each stage."""
import argparse

import matplotlib.pyplot as plt
import networkx as nx
from networkx.drawing.nx_pylab import draw_networkx

from hepadet.models.backbone import NetConfig, concat_shape, shape_trace


def stage_graph(cfg: NetConfig) -> nx.DiGraph:
    """Chain of stage rows, plus the concatenation head fed by Pool2 and Blocks 2-4."""
    graph = nx.DiGraph()
    rows = shape_trace(cfg)
    for row in rows:
        graph.add_node(row.name, label=f"{row.name}\n{row.size}")
    for prev, row in zip(rows, rows[1:]):
        graph.add_edge(prev.name, row.name)
    if cfg.concat_head:
        concat = concat_shape(cfg)
        graph.add_node(concat.name, label=f"{concat.name}\n{concat.size}")
        for name in ("Pool2", "Block2", "Block3", "Block4"):
            graph.add_edge(name, concat.name)
    return graph


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Draw the backbone stage graph.")
    parser.add_argument("--depth", type=int, choices=[50, 101], default=50)
    parser.add_argument("--input-size", type=int, default=448)
    parser.add_argument("--output", default="stageplot")
    args = parser.parse_args()

    graph = stage_graph(NetConfig(depth=args.depth, input_size=args.input_size, concat_head=True))
    positions = {name: (index, 0) for index, name in enumerate(graph)}
    positions["Concat"] = (len(positions) - 2, -1)
    draw_networkx(graph, pos=positions, labels=nx.get_node_attributes(graph, "label"), node_size=2400, font_size=7)
    # Set margins for the axes so that nodes aren't clipped
    ax = plt.gca()
    ax.margins(0.20)
    plt.axis("off")
    plt.title(f"R-{args.depth} stages at {args.input_size}x{args.input_size}")
    plt.savefig(fname=args.output)
