"""Built-in synthetic networks used by the examples, tests and benchmarks."""
from __future__ import annotations

from importlib import resources

import numpy as np

from .ingest import parse_network_json
from .network import Network, Node, Pipe, SensorLayout, build_network, sensor_layout


def t_example() -> tuple[Network, SensorLayout]:
    """The 9-junction, 10-pipe, single-inlet demo network.

    Ships with 4 pressure and 4 demand sensors (the inlet is metered in
    both); total nominal inflow is 88 l/s.
    """
    text = (
        resources.files("fgll").joinpath("data/networks/t_example.json").read_text()
    )
    spec = parse_network_json(text)
    net = build_network(spec)
    layout = sensor_layout(net, spec.pressure_sensors, spec.demand_sensors)
    return net, layout


def grid_network(
    rows: int = 5,
    cols: int = 5,
    seed: int = 0,
    reservoir_head: float = 60.0,
) -> Network:
    """Random rows x cols grid with the corner node as the reservoir.

    Pipe lengths, roughness, diameters, junction elevations and base
    demands are drawn from fixed ranges with the given seed.
    """
    rng = np.random.default_rng(seed)
    n = rows * cols
    elevations = rng.uniform(5.0, 15.0, size=n)
    demands = rng.uniform(0.002, 0.004, size=n)  # 2-4 l/s
    nodes = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if i == 0:
                nodes.append(
                    Node(
                        id="R0",
                        elevation=reservoir_head,
                        kind="reservoir",
                        head=reservoir_head,
                    )
                )
            else:
                nodes.append(
                    Node(
                        id=f"N{r}-{c}",
                        elevation=float(elevations[i]),
                        base_demand=float(demands[i]),
                    )
                )
    pipes = []
    k = 0
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            for (dr, dc) in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr < rows and cc < cols:
                    j = rr * cols + cc
                    pipes.append(
                        Pipe(
                            id=f"P{k}",
                            source=i,
                            sink=j,
                            length=float(rng.uniform(300.0, 700.0)),
                            roughness=float(rng.uniform(110.0, 140.0)),
                            diameter=float(rng.uniform(0.20, 0.30)),
                        )
                    )
                    k += 1
    return Network(nodes, pipes)


def coverage_layout(
    net: Network,
    pressure_coverage: float = 0.3,
    demand_coverage: float = 0.3,
    seed: int = 0,
) -> SensorLayout:
    """Seeded sensor placement covering a fraction of all nodes.

    Reservoirs are always metered in both pressure and demand and count
    toward the coverage."""
    rng = np.random.default_rng(seed)
    junctions = net.junction_indices

    def pick(coverage: float) -> list[int]:
        total = int(round(coverage * net.n))
        extra = max(0, total - net.reservoir_indices.size)
        extra = min(extra, junctions.size)
        return [int(i) for i in rng.choice(junctions, size=extra, replace=False)]

    return sensor_layout(net, pick(pressure_coverage), pick(demand_coverage))
