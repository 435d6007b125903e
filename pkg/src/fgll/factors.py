"""Water-network factor families for the estimation/localization graphs.

Three block-variable kinds exist per time instant: "head" (hydraulic
heads, m), "demand" (nodal consumption, m^3/s) and "leak" (head
residuals vs. a leak-free reference, m). Every factor here returns an
engine Factor with residual/Jacobian evaluators; noise variances come
from the run configuration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .factorgraph import Factor, LinearFactor, VariableKey, make_factor
from .fgsi import Interpolator
from .hydraulics import pipe_flow, pipe_flow_gradient
from .ingest import MeasurementSet, NoiseConfig
from .network import Network, SensorLayout, StructMatrices

HEAD = "head"
DEMAND = "demand"
LEAK = "leak"


def head_key(t: int) -> VariableKey:
    return VariableKey(HEAD, t)


def demand_key(t: int) -> VariableKey:
    return VariableKey(DEMAND, t)


def leak_key(t: int) -> VariableKey:
    return VariableKey(LEAK, t)


@dataclass(frozen=True)
class FactorInputs:
    """Everything the factor builders need for one window.

    ``leakfree_heads`` maps a variable instant to its fixed leak-free
    head vector and is only present when building the localization
    graph.
    """

    net: Network
    struct: StructMatrices
    interp: Interpolator
    layout: SensorLayout
    measurements: MeasurementSet
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    leakfree_heads: Mapping[int, np.ndarray] | None = None

    def __post_init__(self):
        if self.measurements.n_s != self.layout.n_s or (
            self.measurements.n_d != self.layout.n_d
        ):
            raise ValidationError("measurement columns do not match sensor layout")

    @property
    def n(self) -> int:
        return self.struct.n


def fused_heads(interp: Interpolator, layout: SensorLayout, h_s: np.ndarray) -> np.ndarray:
    """Interpolated head vector with sensed rows replaced by the readings."""
    h = interp.interpolate(h_s)
    h[list(layout.pressure_nodes)] = h_s
    return h


def delta_heads(
    interp: Interpolator, layout: SensorLayout, h_s_t: np.ndarray, h_s_t1: np.ndarray
) -> np.ndarray:
    """Expected head change between consecutive instants.

    Interpolates the measured differences to all nodes, then overwrites
    the sensed rows with the raw measured differences.
    """
    return fused_heads(interp, layout, np.asarray(h_s_t1) - np.asarray(h_s_t))


def delta_demands(
    layout: SensorLayout, d_s_t: np.ndarray, d_s_t1: np.ndarray
) -> np.ndarray:
    """Expected demand change: zero except at demand-sensed rows."""
    delta = np.zeros(layout.n)
    delta[list(layout.demand_nodes)] = np.asarray(d_s_t1) - np.asarray(d_s_t)
    return delta


def temporal_head_factor(
    t: int, t1: int, delta_h: np.ndarray, variance: float
) -> Factor:
    """r = (h[t1] - h[t]) - delta_h."""
    n = delta_h.size
    eye = sp.identity(n, format="csr")
    return LinearFactor(
        "temporal_head",
        (head_key(t), head_key(t1)),
        variance,
        blocks=(-eye, eye),
        offset=-np.asarray(delta_h, dtype=float),
    )


def prior_head_factor(t1: int, h_prior: np.ndarray, delta_h: np.ndarray, variance: float) -> Factor:
    """Unary temporal factor against the fixed prior: r = h[t1] - (h_prior + delta_h)."""
    n = h_prior.size
    return LinearFactor(
        "prior_head",
        (head_key(t1),),
        variance,
        blocks=(sp.identity(n, format="csr"),),
        offset=-(np.asarray(h_prior, dtype=float) + np.asarray(delta_h, dtype=float)),
    )


def temporal_demand_factor(
    t: int, t1: int, delta_d: np.ndarray, variance: float
) -> Factor:
    """r = (d[t1] - d[t]) - delta_d."""
    n = delta_d.size
    eye = sp.identity(n, format="csr")
    return LinearFactor(
        "temporal_demand",
        (demand_key(t), demand_key(t1)),
        variance,
        blocks=(-eye, eye),
        offset=-np.asarray(delta_d, dtype=float),
    )


def structural_factor(
    t: int, layout: SensorLayout, h_hat: np.ndarray, variance: float
) -> Factor | None:
    """r = S_u h[t] - S_u h_hat; omitted when every node is sensed."""
    if layout.S_u.shape[0] == 0:
        return None
    return LinearFactor(
        "structural",
        (head_key(t),),
        variance,
        blocks=(layout.S_u,),
        offset=-(layout.S_u @ np.asarray(h_hat, dtype=float)),
    )


def demand_measurement_factor(
    t: int, layout: SensorLayout, d_s: np.ndarray, variance: float
) -> Factor | None:
    """r = S_d d[t] - d_s; omitted when there are no demand sensors."""
    if layout.n_d == 0:
        return None
    return LinearFactor(
        "demand_measurement",
        (demand_key(t),),
        variance,
        blocks=(layout.S_d,),
        offset=-np.asarray(d_s, dtype=float),
    )


def zero_sum_factor(t: int, n: int, variance: float) -> Factor:
    """r = sum(d[t]): inflows (negative demands) must balance consumption."""
    ones = sp.csr_matrix(np.ones((1, n)))
    return LinearFactor(
        "zero_sum", (demand_key(t),), variance, blocks=(ones,), offset=np.zeros(1)
    )


def demand_head_factor(t: int, struct: StructMatrices, B: sp.csr_matrix, variance: float) -> Factor:
    """Hazen-Williams coupling r = d[t] + B' q(B h[t]).

    The smoothed head-loss law is odd in the head difference, which
    makes the residual independent of the stored pipe orientation; sign
    flips during optimization are therefore handled implicitly.
    """
    n = B.shape[1]
    tau = struct.tau
    eye = sp.identity(n, format="csr")

    def residual(d: np.ndarray, h: np.ndarray) -> np.ndarray:
        q = pipe_flow(B @ h, tau)
        return d + B.T @ q

    def jacobian(d: np.ndarray, h: np.ndarray):
        grad = pipe_flow_gradient(B @ h, tau)
        J_h = (B.T @ sp.diags(grad) @ B).tocsr()
        return (eye, J_h)

    return make_factor(
        "demand_head",
        (demand_key(t), head_key(t)),
        n,
        variance,
        residual,
        jacobian,
    )


def pressure_residual_factor(t: int, h_leakfree: np.ndarray, variance: float) -> Factor:
    """r = l[t] - (h[t] - h_leakfree), with the leak-free head fixed."""
    n = h_leakfree.size
    eye = sp.identity(n, format="csr")
    return LinearFactor(
        "pressure_residual",
        (leak_key(t), head_key(t)),
        variance,
        blocks=(eye, -eye),
        offset=np.asarray(h_leakfree, dtype=float),
    )


def leak_constraint_factor(t: int, t1: int, n: int, variance: float) -> Factor:
    """r = l[t1] - l[t]: consecutive residual states stay similar."""
    eye = sp.identity(n, format="csr")
    return LinearFactor(
        "leak_constraint",
        (leak_key(t), leak_key(t1)),
        variance,
        blocks=(-eye, eye),
        offset=np.zeros(n),
    )
