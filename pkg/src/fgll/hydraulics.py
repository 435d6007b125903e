"""Demand-driven steady-state hydraulics and scenario simulation.

The solver fixes reservoir heads, takes junction demands as inputs and
finds the junction heads for which pipe flows given by the
Hazen-Williams law balance the demands. Each time instant is solved
independently; temporal coupling only comes from the demand pattern.

The head-loss law is smoothed near zero: below ``EPS_REG`` meters of
head difference the power law is replaced by its secant through the
origin, keeping the flow gradient bounded. The smoothed law is extended
oddly to negative head differences so that residuals stay well defined
when trial iterates reverse a pipe.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergence, SingularJacobian, ValidationError
from .ingest import MeasurementSet
from .network import (
    NU,
    Network,
    Node,
    Pipe,
    SensorLayout,
    StructMatrices,
    signed_incidence,
    struct_matrices,
)

#: Head-difference threshold below which the power law is linearized [m].
EPS_REG = 1e-6


def pipe_flow(delta_h: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Flow through pipes with head difference delta_h and resistance tau.

    Inverts ``|delta_h| = tau * q**NU`` with the secant smoothing below
    EPS_REG; odd in delta_h.
    """
    dh = np.asarray(delta_h, dtype=float)
    mag = np.abs(dh)
    slope = (EPS_REG / tau) ** (1.0 / NU) / EPS_REG
    small = mag < EPS_REG
    with np.errstate(invalid="ignore"):
        q = np.where(small, slope * dh, np.sign(dh) * (mag / tau) ** (1.0 / NU))
    return q


def pipe_flow_gradient(delta_h: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """d(pipe_flow)/d(delta_h); even in delta_h, strictly positive."""
    dh = np.asarray(delta_h, dtype=float)
    mag = np.abs(dh)
    slope = (EPS_REG / tau) ** (1.0 / NU) / EPS_REG
    small = mag < EPS_REG
    safe = np.where(small, EPS_REG, mag)
    return np.where(small, slope, (1.0 / NU) * (safe / tau) ** (1.0 / NU - 1.0) / tau)


def pipe_headloss(q: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Head loss matching pipe_flow: the exact inverse of the smoothed law."""
    q = np.asarray(q, dtype=float)
    mag = np.abs(q)
    q_eps = (EPS_REG / tau) ** (1.0 / NU)
    small = mag < q_eps
    slope = q_eps / EPS_REG
    return np.where(small, q / slope, np.sign(q) * tau * mag ** NU)


@dataclass(frozen=True)
class HydraulicState:
    """Heads (m), pipe flows (m^3/s, >= 0 in head-sign orientation) and
    nodal demands (m^3/s, outflow-positive; negative at supplying
    reservoirs)."""

    h: np.ndarray
    q: np.ndarray
    d: np.ndarray


def head_flows(net: Network, h: np.ndarray, struct: StructMatrices | None = None) -> np.ndarray:
    """Pipe flows implied by a head vector, oriented by the head signs."""
    st = struct if struct is not None else struct_matrices(net)
    B = signed_incidence(net, h)
    return pipe_flow(B @ np.asarray(h, dtype=float), st.tau)


def head_demands(net: Network, h: np.ndarray, struct: StructMatrices | None = None) -> np.ndarray:
    """Nodal demands implied by a head vector (outflow-positive)."""
    st = struct if struct is not None else struct_matrices(net)
    B = signed_incidence(net, h)
    q = pipe_flow(B @ np.asarray(h, dtype=float), st.tau)
    return -(B.T @ q)


def hydraulic_residuals(
    net: Network, state: HydraulicState, struct: StructMatrices | None = None
) -> tuple[float, float]:
    """Infinity norms of the mass-balance (m^3/s) and head-loss (m) residuals."""
    st = struct if struct is not None else struct_matrices(net)
    B = signed_incidence(net, state.h)
    mass = float(np.max(np.abs(B.T @ state.q + state.d))) if net.m else 0.0
    hw = float(np.max(np.abs(B @ state.h - pipe_headloss(state.q, st.tau))))
    return mass, hw


def steady_state(
    net: Network,
    d_junctions: Sequence[float] | np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100,
    struct: StructMatrices | None = None,
) -> HydraulicState:
    """Solve the demand-driven steady state with damped Newton iteration.

    ``d_junctions`` lists consumption at junction nodes (m^3/s) in
    junction order. Raises NonConvergence or SingularJacobian on
    failure.
    """
    st = struct if struct is not None else struct_matrices(net)
    junctions = net.junction_indices
    d_j = np.asarray(d_junctions, dtype=float)
    if d_j.shape != (junctions.size,):
        raise ValidationError(
            f"expected {junctions.size} junction demands, got {d_j.shape}"
        )

    h = np.zeros(net.n)
    h[net.reservoir_indices] = net.reservoir_heads()
    h[junctions] = net.reservoir_heads().mean() - 1.0

    B0 = net.incidence().tocsc()
    B0_j = B0[:, junctions]

    def residual(h_full: np.ndarray) -> np.ndarray:
        q = pipe_flow(B0 @ h_full, st.tau)
        return np.asarray(B0_j.T @ q).ravel() + d_j

    F = residual(h)
    cost = float(F @ F)
    for _ in range(max_iter):
        if np.max(np.abs(F)) < tol:
            break
        grad = pipe_flow_gradient(B0 @ h, st.tau)
        J = (B0_j.T @ sp.diags(grad) @ B0_j).tocsc()
        try:
            step = spla.spsolve(J, -F)
        except RuntimeError as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian("singular Newton system (flat head profile?)")
        # step halving on cost increase
        alpha = 1.0
        for _ in range(30):
            h_try = h.copy()
            h_try[junctions] += alpha * step
            F_try = residual(h_try)
            cost_try = float(F_try @ F_try)
            if cost_try < cost or cost_try == 0.0:
                break
            alpha *= 0.5
        h, F, cost = h_try, F_try, cost_try
    else:
        raise NonConvergence(max_iter, float(np.max(np.abs(F))))

    B = signed_incidence(net, h)
    q = pipe_flow(B @ h, st.tau)
    d = -np.asarray(B.T @ q).ravel()
    return HydraulicState(h=h, q=q, d=d)


# --------------------------------------------------------------------------
# Scenario generation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """One simulated operating window.

    demands is (T, n_junctions) consumption in m^3/s, column order =
    junction order. An optional leak adds ``leak_sizes[t]`` m^3/s of
    extra demand at junction node index ``leak_node`` at every instant.
    Attribute noise perturbs roughness/diameter once per scenario;
    demand noise perturbs every (t, junction) entry.
    """

    demands: np.ndarray
    leak_node: int | None = None
    leak_sizes: np.ndarray | None = None
    roughness_noise: float = 0.0
    diameter_noise: float = 0.0
    demand_noise: float = 0.0
    seed: int = 0

    @property
    def T(self) -> int:
        return self.demands.shape[0]


def diurnal_pattern(
    T: int, mean: float = 1.0, amplitude: float = 0.25, period: int | None = None
) -> np.ndarray:
    """Sinusoidal demand multiplier pattern over T instants."""
    period = period or T
    t = np.arange(T)
    return mean * (1.0 + amplitude * np.sin(2.0 * np.pi * t / period))


def perturb_network(
    net: Network,
    roughness_noise: float,
    diameter_noise: float,
    rng: np.random.Generator,
) -> Network:
    """Multiplicatively perturb roughness/diameter, one draw per pipe.

    Noise is uniform in [-level, +level]. Always consumes two draws per
    pipe so seeded streams stay aligned across noise settings.
    """
    r_fac = 1.0 + roughness_noise * rng.uniform(-1.0, 1.0, size=net.m)
    d_fac = 1.0 + diameter_noise * rng.uniform(-1.0, 1.0, size=net.m)
    pipes = [
        Pipe(
            id=p.id,
            source=p.source,
            sink=p.sink,
            length=p.length,
            roughness=p.roughness * r_fac[k],
            diameter=p.diameter * d_fac[k],
        )
        for k, p in enumerate(net.pipes)
    ]
    return Network(net.nodes, pipes)


def _validate_scenario(net: Network, scenario: Scenario) -> None:
    nj = net.junction_indices.size
    if scenario.demands.ndim != 2 or scenario.demands.shape[1] != nj:
        raise ValidationError(
            f"scenario demands must be (T, {nj}), got {scenario.demands.shape}"
        )
    if scenario.T < 2:
        raise ValidationError("scenario must cover at least 2 instants")
    if scenario.leak_node is not None:
        if net.nodes[scenario.leak_node].is_reservoir:
            raise ValidationError("leak node must be a junction")
        sizes = scenario.leak_sizes
        if sizes is None or np.asarray(sizes).shape != (scenario.T,):
            raise ValidationError("leak_sizes must be a T-vector")
        if np.any(np.asarray(sizes) < 0):
            raise ValidationError("leak sizes must be >= 0")


def simulate_scenario(
    net: Network, scenario: Scenario, tol: float = 1e-10, max_iter: int = 100
) -> tuple[list[HydraulicState], Network]:
    """Simulate a scenario instant by instant.

    Returns the per-instant states and the attribute-perturbed network
    they were solved on. Deterministic for a given scenario seed.
    """
    _validate_scenario(net, scenario)
    rng = np.random.default_rng(scenario.seed)
    sim_net = perturb_network(
        net, scenario.roughness_noise, scenario.diameter_noise, rng
    )
    noise = scenario.demand_noise * rng.uniform(-1.0, 1.0, size=scenario.demands.shape)
    demands = scenario.demands * (1.0 + noise)
    if scenario.leak_node is not None:
        leak_col = int(np.where(net.junction_indices == scenario.leak_node)[0][0])
        demands = demands.copy()
        demands[:, leak_col] += np.asarray(scenario.leak_sizes)
    struct = struct_matrices(sim_net)
    states = [
        steady_state(sim_net, demands[t], tol=tol, max_iter=max_iter, struct=struct)
        for t in range(scenario.T)
    ]
    return states, sim_net


def sample_sensors(
    net: Network, states: Sequence[HydraulicState], layout: SensorLayout
) -> MeasurementSet:
    """Read the sensed entries of a state sequence into a MeasurementSet."""
    T = len(states)
    h_s = np.zeros((T, layout.n_s))
    d_s = np.zeros((T, layout.n_d))
    for t, state in enumerate(states):
        h_s[t] = layout.S_p @ state.h
        d_s[t] = layout.S_d @ state.d
    ids = net.node_ids
    return MeasurementSet(
        pressure_nodes=tuple(ids[i] for i in layout.pressure_nodes),
        demand_nodes=tuple(ids[i] for i in layout.demand_nodes),
        h_s=h_s,
        d_s=d_s,
    )


def states_csv(net: Network, states: Sequence[HydraulicState], flow_scale: float = 1e-3) -> str:
    """Render simulated states as the (t,node_id,h,d) CSV, demands in
    1/flow_scale units."""
    lines = [",".join(("t", "node_id", "h", "d"))]
    for t, state in enumerate(states):
        for i, node in enumerate(net.nodes):
            lines.append(
                f"{t},{node.id},{float(state.h[i])!r},{float(state.d[i] / flow_scale)!r}"
            )
    return "\n".join(lines) + "\n"
