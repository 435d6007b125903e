"""Water distribution network model and derived structural matrices.

A network is an immutable graph of junctions/reservoirs connected by
pipes. This module builds the weighted adjacency/degree/Laplacian
matrices, the diagonal pipe-resistance matrix, head-sign incidence
matrices, sensor selection matrices and shortest-path pipe distances
that the interpolation and estimation layers consume.

Units are SI throughout: heads/elevations/lengths in m, diameters in m,
flows and demands in m^3/s.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import DanglingEndpoint, ValidationError

if TYPE_CHECKING:
    from .ingest import NetworkSpec

#: Hazen-Williams flow exponent.
NU = 1.852

#: SI prefactor of the Hazen-Williams resistance coefficient.
HW_COEFFICIENT = 10.674

#: Diameter exponent of the Hazen-Williams resistance coefficient.
HW_DIAMETER_EXP = 4.87

JUNCTION = "junction"
RESERVOIR = "reservoir"


@dataclass(frozen=True)
class Node:
    id: str
    elevation: float
    kind: str = JUNCTION
    head: float | None = None      # fixed hydraulic head, reservoirs only
    base_demand: float = 0.0       # nominal consumption, junctions only [m^3/s]

    @property
    def is_reservoir(self) -> bool:
        return self.kind == RESERVOIR


@dataclass(frozen=True)
class Pipe:
    id: str
    source: int
    sink: int
    length: float     # m
    roughness: float  # Hazen-Williams C (dimensionless)
    diameter: float   # m


def resistance(pipe: Pipe) -> float:
    """Hazen-Williams resistance coefficient of a pipe.

    Relates head loss to flow through ``|h_i - h_j| = tau * q**NU``
    with q in m^3/s and heads in m.
    """
    if pipe.length <= 0 or pipe.roughness <= 0 or pipe.diameter <= 0:
        raise ValidationError(
            f"pipe {pipe.id!r}: length, roughness and diameter must be positive"
        )
    return HW_COEFFICIENT * pipe.length / (
        pipe.roughness ** NU * pipe.diameter ** HW_DIAMETER_EXP
    )


class Network:
    """Validated, immutable pipe network.

    Node and pipe order is the order of appearance in the input; every
    vector/matrix in the package indexes nodes and pipes this way.
    """

    def __init__(self, nodes: Sequence[Node], pipes: Sequence[Pipe]):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.pipes: tuple[Pipe, ...] = tuple(pipes)
        self.n = len(self.nodes)
        self.m = len(self.pipes)
        self._index = {node.id: i for i, node in enumerate(self.nodes)}
        self._validate()
        self.junction_indices = np.array(
            [i for i, nd in enumerate(self.nodes) if not nd.is_reservoir], dtype=int
        )
        self.reservoir_indices = np.array(
            [i for i, nd in enumerate(self.nodes) if nd.is_reservoir], dtype=int
        )
        self._incidence = _stored_incidence(self)
        self._distances: PipeDistances | None = None

    def _validate(self) -> None:
        if len(self._index) != self.n:
            seen: set[str] = set()
            for node in self.nodes:
                if node.id in seen:
                    raise ValidationError(f"duplicate node id {node.id!r}")
                seen.add(node.id)
        pipe_ids: set[str] = set()
        for pipe in self.pipes:
            if pipe.id in pipe_ids:
                raise ValidationError(f"duplicate pipe id {pipe.id!r}")
            pipe_ids.add(pipe.id)
            for end in (pipe.source, pipe.sink):
                if not 0 <= end < self.n:
                    raise DanglingEndpoint(
                        f"pipe {pipe.id!r} references node index {end}"
                    )
            if pipe.source == pipe.sink:
                raise ValidationError(f"pipe {pipe.id!r} is a self-loop")
            resistance(pipe)  # raises on non-positive attributes
        if not any(nd.is_reservoir for nd in self.nodes):
            raise ValidationError("network has no reservoir")
        for node in self.nodes:
            if node.is_reservoir and node.head is None:
                raise ValidationError(f"reservoir {node.id!r} has no fixed head")
        if self.n > 1:
            adj = sp.coo_matrix(
                (
                    np.ones(self.m),
                    (
                        [p.source for p in self.pipes],
                        [p.sink for p in self.pipes],
                    ),
                ),
                shape=(self.n, self.n),
            )
            ncomp, _ = connected_components(adj, directed=False)
            if ncomp != 1:
                raise ValidationError("network graph is not connected")

    def node_index(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise DanglingEndpoint(f"unknown node id {node_id!r}") from None

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(nd.id for nd in self.nodes)

    def elevations(self) -> np.ndarray:
        return np.array([nd.elevation for nd in self.nodes])

    def reservoir_heads(self) -> np.ndarray:
        """Fixed heads at reservoir nodes, in reservoir_indices order."""
        return np.array([self.nodes[i].head for i in self.reservoir_indices])

    def base_demands(self) -> np.ndarray:
        """Nominal junction demands embedded in a full n-vector [m^3/s]."""
        d = np.zeros(self.n)
        for i, nd in enumerate(self.nodes):
            if not nd.is_reservoir:
                d[i] = nd.base_demand
        return d

    def incidence(self) -> sp.csr_matrix:
        """m x n incidence in stored pipe orientation (+1 source, -1 sink)."""
        return self._incidence

    def distances(self) -> "PipeDistances":
        if self._distances is None:
            self._distances = PipeDistances(self)
        return self._distances


def build_network(spec: "NetworkSpec") -> Network:
    """Validate a parsed network description into a Network."""
    if not spec.nodes:
        raise ValidationError("network description has no nodes")
    nodes = [
        Node(
            id=rec.id,
            elevation=rec.elevation,
            kind=rec.kind,
            head=rec.head,
            base_demand=rec.base_demand,
        )
        for rec in spec.nodes
    ]
    index: dict[str, int] = {}
    for i, node in enumerate(nodes):
        if node.id in index:
            raise ValidationError(f"duplicate node id {node.id!r}")
        index[node.id] = i
    pipes = []
    for rec in spec.pipes:
        if rec.source not in index:
            raise DanglingEndpoint(
                f"pipe {rec.id!r} references unknown node {rec.source!r}"
            )
        if rec.sink not in index:
            raise DanglingEndpoint(
                f"pipe {rec.id!r} references unknown node {rec.sink!r}"
            )
        pipes.append(
            Pipe(
                id=rec.id,
                source=index[rec.source],
                sink=index[rec.sink],
                length=rec.length,
                roughness=rec.roughness,
                diameter=rec.diameter,
            )
        )
    return Network(nodes, pipes)


@dataclass(frozen=True)
class StructMatrices:
    """Structural matrices of a network.

    W  -- n x n weighted adjacency, w_ij = 1/length of the pipe joining i,j
    D  -- n x n diagonal weighted-degree matrix (row sums of W)
    L  -- n x n Laplacian, L = D - W
    T  -- m x m diagonal resistance matrix
    nu -- Hazen-Williams flow exponent
    """

    W: sp.csr_matrix
    D: sp.csr_matrix
    L: sp.csr_matrix
    T: sp.csr_matrix
    nu: float = NU
    tau: np.ndarray = field(default_factory=lambda: np.empty(0))
    degrees: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.tau.size


def struct_matrices(net: Network) -> StructMatrices:
    """Build the adjacency/degree/Laplacian/resistance matrices of a network."""
    rows, cols, vals = [], [], []
    tau = np.empty(net.m)
    for k, pipe in enumerate(net.pipes):
        w = 1.0 / pipe.length
        rows.extend((pipe.source, pipe.sink))
        cols.extend((pipe.sink, pipe.source))
        vals.extend((w, w))
        tau[k] = resistance(pipe)
    W = sp.coo_matrix((vals, (rows, cols)), shape=(net.n, net.n)).tocsr()
    degrees = np.asarray(W.sum(axis=1)).ravel()
    D = sp.diags(degrees, format="csr")
    L = (D - W).tocsr()
    T = sp.diags(tau, format="csr")
    return StructMatrices(W=W, D=D, L=L, T=T, nu=NU, tau=tau, degrees=degrees)


def _stored_incidence(net: Network) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for k, pipe in enumerate(net.pipes):
        rows.extend((k, k))
        cols.extend((pipe.source, pipe.sink))
        vals.extend((1.0, -1.0))
    return sp.coo_matrix((vals, (rows, cols)), shape=(net.m, net.n)).tocsr()


def signed_incidence(net: Network, h: np.ndarray) -> sp.csr_matrix:
    """m x n incidence oriented by head sign so that B @ h >= 0.

    Row k carries +1 at the higher-head endpoint of pipe k and -1 at the
    lower one; exact head ties keep the stored pipe orientation.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (net.n,):
        raise ValidationError(f"expected head vector of length {net.n}")
    if not np.all(np.isfinite(h)):
        raise ValidationError("head vector contains non-finite entries")
    B = net.incidence()
    drops = B @ h
    flip = sp.diags(np.where(drops < 0, -1.0, 1.0))
    return (flip @ B).tocsr()


class PipeDistances:
    """All-pairs shortest-path pipe distances, computed per source on demand.

    Lengths are reported in kilometers; hop counts in number of pipes.
    """

    def __init__(self, net: Network):
        self._n = net.n
        rows = [p.source for p in net.pipes]
        cols = [p.sink for p in net.pipes]
        km = np.array([p.length / 1000.0 for p in net.pipes])
        self._km_graph = sp.coo_matrix(
            (km, (rows, cols)), shape=(net.n, net.n)
        ).tocsr()
        self._hop_graph = sp.coo_matrix(
            (np.ones(net.m), (rows, cols)), shape=(net.n, net.n)
        ).tocsr()
        self._km_rows: dict[int, np.ndarray] = {}
        self._hop_rows: dict[int, np.ndarray] = {}

    def _row(self, cache: dict, graph: sp.csr_matrix, i: int) -> np.ndarray:
        if i not in cache:
            cache[i] = dijkstra(graph, directed=False, indices=i)
        return cache[i]

    def km(self, i: int, j: int) -> float:
        return float(self._row(self._km_rows, self._km_graph, i)[j])

    def hops(self, i: int, j: int) -> float:
        return float(self._row(self._hop_rows, self._hop_graph, i)[j])

    def km_from(self, i: int) -> np.ndarray:
        return self._row(self._km_rows, self._km_graph, i).copy()

    def hops_from(self, i: int) -> np.ndarray:
        return self._row(self._hop_rows, self._hop_graph, i).copy()


def pipe_distances(net: Network) -> PipeDistances:
    """Shortest-path distance oracle over the pipe graph (km and hops)."""
    return net.distances()


def _selection(indices: Iterable[int], n: int) -> sp.csr_matrix:
    idx = list(indices)
    data = np.ones(len(idx))
    rows = np.arange(len(idx))
    return sp.coo_matrix((data, (rows, idx)), shape=(len(idx), n)).tocsr()


@dataclass(frozen=True)
class SensorLayout:
    """Pressure/demand sensor placement with identity-row selection matrices.

    S_p picks the pressure-sensed rows of an n-vector, S_d the
    demand-sensed rows, S_u the remaining (unmetered-pressure) rows in
    ascending node order.
    """

    n: int
    pressure_nodes: tuple[int, ...]
    demand_nodes: tuple[int, ...]
    S_p: sp.csr_matrix
    S_d: sp.csr_matrix
    S_u: sp.csr_matrix

    @property
    def n_s(self) -> int:
        return len(self.pressure_nodes)

    @property
    def n_d(self) -> int:
        return len(self.demand_nodes)

    @property
    def unmetered_nodes(self) -> tuple[int, ...]:
        sensed = set(self.pressure_nodes)
        return tuple(i for i in range(self.n) if i not in sensed)


def sensor_layout(
    net: Network,
    pressure: Sequence[int | str],
    demand: Sequence[int | str] = (),
    include_reservoirs: bool = True,
) -> SensorLayout:
    """Build a SensorLayout from node indices or ids.

    Water inlets are normally metered in both pressure and demand, so
    reservoir nodes are appended to both sets unless
    ``include_reservoirs`` is disabled (useful for synthetic edge cases).
    """

    def _resolve(seq: Sequence[int | str]) -> list[int]:
        out = []
        for item in seq:
            idx = net.node_index(item) if isinstance(item, str) else int(item)
            if not 0 <= idx < net.n:
                raise ValidationError(f"sensor index {idx} out of range")
            if idx not in out:
                out.append(idx)
        return out

    p_nodes = _resolve(pressure)
    d_nodes = _resolve(demand)
    if include_reservoirs:
        for r in net.reservoir_indices:
            if r not in p_nodes:
                p_nodes.append(int(r))
            if r not in d_nodes:
                d_nodes.append(int(r))
    unmetered = [i for i in range(net.n) if i not in set(p_nodes)]
    return SensorLayout(
        n=net.n,
        pressure_nodes=tuple(p_nodes),
        demand_nodes=tuple(d_nodes),
        S_p=_selection(p_nodes, net.n),
        S_d=_selection(d_nodes, net.n),
        S_u=_selection(unmetered, net.n),
    )
