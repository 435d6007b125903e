"""Input parsing: network descriptions, measurement CSVs, run configuration.

Two network formats are read: a minimal EPANET-INP subset (sections
[JUNCTIONS], [RESERVOIRS], [PIPES], optional [COORDINATES] and
[OPTIONS] for flow units) and a native JSON schema. Measurements arrive
as a long-format CSV with header ``t,node_id,kind,value``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, TYPE_CHECKING

import numpy as np

from .errors import (
    ConfigError,
    DuplicateReading,
    InputError,
    MissingReading,
    MissingSection,
    ValidationError,
)

if TYPE_CHECKING:
    from .network import Network

log = logging.getLogger(__name__)

#: m^3/s per unit of each supported flow unit.
FLOW_UNIT_SCALE = {"lps": 1e-3, "m3s": 1.0}

PRESSURE = "pressure"
DEMAND = "demand"


@dataclass(frozen=True)
class NodeRecord:
    id: str
    elevation: float
    kind: str = "junction"
    head: float | None = None
    base_demand: float = 0.0  # m^3/s


@dataclass(frozen=True)
class PipeRecord:
    id: str
    source: str
    sink: str
    length: float    # m
    roughness: float
    diameter: float  # m


@dataclass(frozen=True)
class NetworkSpec:
    """Raw network description before graph validation."""

    nodes: tuple[NodeRecord, ...]
    pipes: tuple[PipeRecord, ...]
    coordinates: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    pressure_sensors: tuple[str, ...] = ()
    demand_sensors: tuple[str, ...] = ()

    @property
    def junction_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "junction")

    @property
    def reservoir_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "reservoir")


@dataclass(frozen=True)
class NoiseConfig:
    """Per-factor noise variances (sigma^2 scalars)."""

    temporal: float = 1e-12
    structural: float = 1e-4
    demand_head: float = 1e-12
    pressure_residual: float = 1e-3
    leak_localization: float = 1e-5
    demand_measurement: float = 1e-4
    zero_sum: float = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    cost_tolerance: float = 1e-9
    lm_initial_damping: float = 1e-4


@dataclass(frozen=True)
class RunConfig:
    mu_L: float = 1.0
    window_T: int = 12
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    rng_seed: int = 0
    flow_units: str = "lps"
    pressure_is_gauge: bool = False

    @property
    def flow_scale(self) -> float:
        """m^3/s per configured flow unit."""
        return FLOW_UNIT_SCALE[self.flow_units]

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def load_config(text: str | Mapping) -> RunConfig:
    """Parse a JSON run configuration, applying defaults for omitted keys."""
    if isinstance(text, str):
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config JSON: {exc}") from exc
    else:
        raw = dict(text)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    def _take(src: dict, known: Sequence[str], where: str) -> dict:
        unknown = set(src) - set(known)
        if unknown:
            raise ConfigError(f"unknown {where} key(s): {sorted(unknown)}")
        return src

    _take(
        raw,
        [
            "mu_L",
            "window_T",
            "noise",
            "solver",
            "rng_seed",
            "flow_units",
            "pressure_is_gauge",
        ],
        "config",
    )
    noise_raw = _take(
        dict(raw.get("noise", {})),
        [
            "temporal",
            "structural",
            "demand_head",
            "pressure_residual",
            "leak_localization",
            "demand_measurement",
            "zero_sum",
        ],
        "noise",
    )
    solver_raw = _take(
        dict(raw.get("solver", {})),
        ["max_iterations", "cost_tolerance", "lm_initial_damping"],
        "solver",
    )
    noise = replace(NoiseConfig(), **{k: float(v) for k, v in noise_raw.items()})
    solver = replace(
        SolverConfig(),
        **{
            k: (int(v) if k == "max_iterations" else float(v))
            for k, v in solver_raw.items()
        },
    )
    cfg = RunConfig(
        mu_L=float(raw.get("mu_L", 1.0)),
        window_T=int(raw.get("window_T", 12)),
        noise=noise,
        solver=solver,
        rng_seed=int(raw.get("rng_seed", 0)),
        flow_units=str(raw.get("flow_units", "lps")),
        pressure_is_gauge=bool(raw.get("pressure_is_gauge", False)),
    )
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    for name, value in vars(cfg.noise).items():
        if not value > 0:
            raise ConfigError(f"noise.{name} must be positive, got {value}")
    if cfg.window_T < 2:
        raise ConfigError(f"window_T must be >= 2, got {cfg.window_T}")
    if cfg.mu_L < 0:
        raise ConfigError(f"mu_L must be >= 0, got {cfg.mu_L}")
    if cfg.solver.max_iterations < 1:
        raise ConfigError("solver.max_iterations must be >= 1")
    if not cfg.solver.cost_tolerance > 0:
        raise ConfigError("solver.cost_tolerance must be positive")
    if not cfg.solver.lm_initial_damping > 0:
        raise ConfigError("solver.lm_initial_damping must be positive")
    if cfg.flow_units not in FLOW_UNIT_SCALE:
        raise ConfigError(
            f"flow_units must be one of {sorted(FLOW_UNIT_SCALE)}, "
            f"got {cfg.flow_units!r}"
        )


# --------------------------------------------------------------------------
# Network descriptions
# --------------------------------------------------------------------------

_INP_MANDATORY = ("JUNCTIONS", "RESERVOIRS", "PIPES")
_INP_KNOWN = _INP_MANDATORY + ("COORDINATES", "OPTIONS")

# EPANET flow-unit codes we accept: LPS (liters/s) and CMS (m^3/s).
_INP_UNIT_SCALE = {"LPS": 1e-3, "CMS": 1.0}


def parse_inp(text: str) -> NetworkSpec:
    """Parse the minimal INP subset into a NetworkSpec.

    Diameters are converted mm -> m and base demands from the file's
    flow unit (default LPS) to m^3/s. Unrecognized sections are skipped
    with a warning.
    """
    sections: dict[str, list[list[str]]] = {}
    current: str | None = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise InputError(f"line {lineno}: malformed section header {line!r}")
            current = line[1:-1].strip().upper()
            if current not in _INP_KNOWN:
                warnings.warn(f"ignoring INP section [{current}]", stacklevel=2)
            sections.setdefault(current, [])
            continue
        if current is None:
            raise InputError(f"line {lineno}: data before any section header")
        sections[current].append(line.split())

    for name in _INP_MANDATORY:
        if name not in sections:
            raise MissingSection(name)

    scale = _INP_UNIT_SCALE["LPS"]
    for row in sections.get("OPTIONS", []):
        if len(row) >= 2 and row[0].upper() == "UNITS":
            code = row[1].upper()
            if code not in _INP_UNIT_SCALE:
                raise InputError(f"unsupported INP flow unit {code!r}")
            scale = _INP_UNIT_SCALE[code]

    nodes: list[NodeRecord] = []
    seen: set[str] = set()

    def _check_id(node_id: str) -> str:
        if node_id in seen:
            raise ValidationError(f"duplicate node id {node_id!r}")
        seen.add(node_id)
        return node_id

    for row in sections["JUNCTIONS"]:
        if len(row) not in (2, 3):
            raise InputError(f"malformed junction row: {' '.join(row)!r}")
        demand = float(row[2]) * scale if len(row) == 3 else 0.0
        nodes.append(
            NodeRecord(
                id=_check_id(row[0]),
                elevation=float(row[1]),
                kind="junction",
                base_demand=demand,
            )
        )
    for row in sections["RESERVOIRS"]:
        if len(row) != 2:
            raise InputError(f"malformed reservoir row: {' '.join(row)!r}")
        head = float(row[1])
        nodes.append(
            NodeRecord(id=_check_id(row[0]), elevation=head, kind="reservoir", head=head)
        )

    pipes: list[PipeRecord] = []
    pipe_ids: set[str] = set()
    for row in sections["PIPES"]:
        if len(row) != 6:
            raise InputError(f"malformed pipe row: {' '.join(row)!r}")
        pid, src, dst, length, diameter_mm, roughness = row
        if pid in pipe_ids:
            raise ValidationError(f"duplicate pipe id {pid!r}")
        pipe_ids.add(pid)
        pipes.append(
            PipeRecord(
                id=pid,
                source=src,
                sink=dst,
                length=float(length),
                roughness=float(roughness),
                diameter=float(diameter_mm) / 1000.0,
            )
        )

    coords = {}
    for row in sections.get("COORDINATES", []):
        if len(row) != 3:
            raise InputError(f"malformed coordinate row: {' '.join(row)!r}")
        coords[row[0]] = (float(row[1]), float(row[2]))

    return NetworkSpec(nodes=tuple(nodes), pipes=tuple(pipes), coordinates=coords)


def parse_network_json(text: str) -> NetworkSpec:
    """Parse the native JSON network schema into a NetworkSpec."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed network JSON: {exc}") from exc
    if "nodes" not in raw or "pipes" not in raw:
        raise InputError("network JSON needs 'nodes' and 'pipes' arrays")
    nodes = []
    for rec in raw["nodes"]:
        kind = rec.get("kind", "junction")
        if kind not in ("junction", "reservoir"):
            raise ValidationError(f"node {rec.get('id')!r}: unknown kind {kind!r}")
        nodes.append(
            NodeRecord(
                id=str(rec["id"]),
                elevation=float(rec["elevation"]),
                kind=kind,
                head=float(rec["head"]) if "head" in rec else None,
                base_demand=float(rec.get("base_demand", 0.0)),
            )
        )
    pipes = [
        PipeRecord(
            id=str(rec["id"]),
            source=str(rec["from"]),
            sink=str(rec["to"]),
            length=float(rec["length_m"]),
            roughness=float(rec["roughness"]),
            diameter=float(rec["diameter_m"]),
        )
        for rec in raw["pipes"]
    ]
    sensors = raw.get("sensors", {})
    coords = {
        str(k): (float(v[0]), float(v[1]))
        for k, v in raw.get("coordinates", {}).items()
    }
    return NetworkSpec(
        nodes=tuple(nodes),
        pipes=tuple(pipes),
        coordinates=coords,
        pressure_sensors=tuple(sensors.get("pressure", ())),
        demand_sensors=tuple(sensors.get("demand", ())),
    )


def network_json(spec: NetworkSpec) -> str:
    """Serialize a NetworkSpec back to the native JSON schema."""
    nodes = []
    for rec in spec.nodes:
        obj: dict = {"id": rec.id, "elevation": rec.elevation, "kind": rec.kind}
        if rec.head is not None:
            obj["head"] = rec.head
        if rec.base_demand:
            obj["base_demand"] = rec.base_demand
        nodes.append(obj)
    out: dict = {
        "nodes": nodes,
        "pipes": [
            {
                "id": p.id,
                "from": p.source,
                "to": p.sink,
                "length_m": p.length,
                "roughness": p.roughness,
                "diameter_m": p.diameter,
            }
            for p in spec.pipes
        ],
    }
    if spec.coordinates:
        out["coordinates"] = {k: list(v) for k, v in spec.coordinates.items()}
    if spec.pressure_sensors or spec.demand_sensors:
        out["sensors"] = {
            "pressure": list(spec.pressure_sensors),
            "demand": list(spec.demand_sensors),
        }
    return json.dumps(out, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# Measurements
# --------------------------------------------------------------------------

CSV_HEADER = ("t", "node_id", "kind", "value")


@dataclass(frozen=True)
class MeasurementSet:
    """Dense per-instant sensor readings.

    h_s is (T, n_s) hydraulic heads in m, d_s is (T, n_d) demands in
    m^3/s; columns follow ``pressure_nodes`` / ``demand_nodes`` id order.
    """

    pressure_nodes: tuple[str, ...]
    demand_nodes: tuple[str, ...]
    h_s: np.ndarray
    d_s: np.ndarray

    @property
    def T(self) -> int:
        return self.h_s.shape[0] if self.h_s.size else self.d_s.shape[0]

    @property
    def n_s(self) -> int:
        return len(self.pressure_nodes)

    @property
    def n_d(self) -> int:
        return len(self.demand_nodes)

    def to_csv(self, flow_scale: float = 1e-3) -> str:
        """Render back to the canonical CSV, demands in 1/flow_scale units."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t in range(self.T):
            for j, node in enumerate(self.pressure_nodes):
                writer.writerow([t, node, PRESSURE, repr(float(self.h_s[t, j]))])
            for j, node in enumerate(self.demand_nodes):
                writer.writerow(
                    [t, node, DEMAND, repr(float(self.d_s[t, j] / flow_scale))]
                )
        return buf.getvalue()


def parse_measurements(
    text: str,
    config: RunConfig | None = None,
    net: "Network | None" = None,
) -> MeasurementSet:
    """Parse a measurement CSV into dense per-instant vectors.

    Every sensor that appears anywhere in the file must have exactly one
    reading per instant for all instants 0..T-1. Demand values are
    converted from the configured flow unit to m^3/s; pressure values
    are taken as heads unless ``pressure_is_gauge`` is set, in which
    case the node elevation is added (requires ``net``).
    """
    cfg = config or RunConfig()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InputError("empty measurements CSV") from None
    if tuple(s.strip() for s in header) != CSV_HEADER:
        raise InputError(
            f"measurements CSV header must be {','.join(CSV_HEADER)!r}"
        )
    readings: dict[tuple[int, str, str], float] = {}
    max_t = -1
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise InputError(f"malformed measurement row: {row!r}")
        t = int(row[0])
        node, kind, value = row[1].strip(), row[2].strip(), float(row[3])
        if t < 0:
            raise InputError(f"negative instant index {t}")
        if kind not in (PRESSURE, DEMAND):
            raise InputError(f"unknown measurement kind {kind!r}")
        if net is not None and node not in net.node_ids:
            raise InputError(f"unknown node id {node!r} in measurements")
        key = (t, node, kind)
        if key in readings:
            raise DuplicateReading(f"duplicate reading for {key}")
        readings[key] = value
        max_t = max(max_t, t)
    if max_t < 0:
        raise InputError("measurements CSV has no data rows")
    T = max_t + 1

    def _node_order(kind: str) -> list[str]:
        seen: list[str] = []
        for (t, node, k) in readings:
            if k == kind and node not in seen:
                seen.append(node)
        return seen

    pressure_nodes = _node_order(PRESSURE)
    demand_nodes = _node_order(DEMAND)
    h_s = np.zeros((T, len(pressure_nodes)))
    d_s = np.zeros((T, len(demand_nodes)))
    for t in range(T):
        for j, node in enumerate(pressure_nodes):
            key = (t, node, PRESSURE)
            if key not in readings:
                raise MissingReading(f"missing pressure reading for {node!r} at t={t}")
            h_s[t, j] = readings[key]
        for j, node in enumerate(demand_nodes):
            key = (t, node, DEMAND)
            if key not in readings:
                raise MissingReading(f"missing demand reading for {node!r} at t={t}")
            d_s[t, j] = readings[key] * cfg.flow_scale
    if cfg.pressure_is_gauge:
        if net is None:
            raise InputError("pressure_is_gauge requires the network for elevations")
        elev = np.array([net.nodes[net.node_index(n)].elevation for n in pressure_nodes])
        h_s = h_s + elev
    return MeasurementSet(
        pressure_nodes=tuple(pressure_nodes),
        demand_nodes=tuple(demand_nodes),
        h_s=h_s,
        d_s=d_s,
    )


STATE_CSV_HEADER = ("t", "node_id", "h", "d")


def parse_states(text: str, flow_scale: float = 1e-3) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Parse a simulated-states CSV (t,node_id,h,d) back into arrays.

    Returns (node ids, heads (T, n) in m, demands (T, n) in m^3/s).
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InputError("empty states CSV") from None
    if tuple(s.strip() for s in header) != STATE_CSV_HEADER:
        raise InputError(f"states CSV header must be {','.join(STATE_CSV_HEADER)!r}")
    rows: dict[tuple[int, str], tuple[float, float]] = {}
    node_order: list[str] = []
    max_t = -1
    for row in reader:
        if not row:
            continue
        if len(row) != 4:
            raise InputError(f"malformed states row: {row!r}")
        t, node = int(row[0]), row[1].strip()
        key = (t, node)
        if key in rows:
            raise DuplicateReading(f"duplicate state row {key}")
        rows[key] = (float(row[2]), float(row[3]) * flow_scale)
        if node not in node_order:
            node_order.append(node)
        max_t = max(max_t, t)
    T = max_t + 1
    h = np.zeros((T, len(node_order)))
    d = np.zeros((T, len(node_order)))
    for t in range(T):
        for j, node in enumerate(node_order):
            if (t, node) not in rows:
                raise MissingReading(f"missing state for {node!r} at t={t}")
            h[t, j], d[t, j] = rows[(t, node)]
    return node_order, h, d
