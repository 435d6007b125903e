"""Sparse nonlinear least-squares over block variables (factor graph).

Variables are fixed-size vector blocks addressed by (kind, instant)
keys; factors contribute isotropically whitened residuals r with cost
|r|^2 / sigma^2. Solving is batch Levenberg-Marquardt on the normal
equations H = sum J'J/s2, g = sum J'r/s2, with the damping multiplied
by 10 on rejected steps and halved on accepted ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DuplicateVariable,
    NonFinite,
    NumericalFault,
    SingularSystem,
    UnknownVariable,
)

Block = np.ndarray
Blocks = Sequence[np.ndarray]


@dataclass(frozen=True, order=True)
class VariableKey:
    kind: str
    t: int

    def __repr__(self) -> str:  # compact: head[3], leak[0], ...
        return f"{self.kind}[{self.t}]"


class Factor:
    """One residual term of the objective.

    Subclasses (or instances built via ``make_factor``) provide
    ``residual(values) -> (dim,)`` and ``jacobian(values) -> list of
    (dim, block_dim) arrays`` aligned with ``keys``.
    """

    def __init__(self, kind: str, keys: Sequence[VariableKey], dim: int, variance: float):
        if variance <= 0:
            raise ValueError(f"factor {kind!r}: variance must be positive")
        self.kind = kind
        self.keys = tuple(keys)
        self.dim = int(dim)
        self.variance = float(variance)

    def residual(self, values: Blocks) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, values: Blocks) -> Sequence[np.ndarray | sp.spmatrix]:
        raise NotImplementedError


class CallableFactor(Factor):
    def __init__(self, kind, keys, dim, variance, residual_fn, jacobian_fn):
        super().__init__(kind, keys, dim, variance)
        self._residual_fn = residual_fn
        self._jacobian_fn = jacobian_fn

    def residual(self, values: Blocks) -> np.ndarray:
        return np.asarray(self._residual_fn(*values), dtype=float)

    def jacobian(self, values: Blocks):
        return self._jacobian_fn(*values)


class LinearFactor(Factor):
    """Affine residual r = sum_i A_i x_i + c with constant Jacobians."""

    def __init__(self, kind, keys, variance, blocks, offset):
        offset = np.asarray(offset, dtype=float)
        super().__init__(kind, keys, offset.size, variance)
        self.blocks = [sp.csr_matrix(b) for b in blocks]
        self.offset = offset

    def residual(self, values: Blocks) -> np.ndarray:
        r = self.offset.copy()
        for A, x in zip(self.blocks, values):
            r += A @ x
        return r

    def jacobian(self, values: Blocks):
        return self.blocks


def make_factor(
    kind: str,
    keys: Sequence[VariableKey],
    dim: int,
    variance: float,
    residual_fn: Callable[..., np.ndarray],
    jacobian_fn: Callable[..., Sequence[np.ndarray]],
) -> Factor:
    return CallableFactor(kind, keys, dim, variance, residual_fn, jacobian_fn)


class Estimate:
    """Current block values of every variable plus the total cost."""

    def __init__(self, values: Mapping[VariableKey, np.ndarray], cost: float = np.nan,
                 iterations: int = 0):
        self._values = {k: np.asarray(v, dtype=float) for k, v in values.items()}
        self.cost = cost
        self.iterations = iterations

    def __getitem__(self, key: VariableKey) -> np.ndarray:
        try:
            return self._values[key]
        except KeyError:
            raise UnknownVariable(f"no value for {key}") from None

    def __contains__(self, key: VariableKey) -> bool:
        return key in self._values

    def __len__(self) -> int:
        return len(self._values)

    def keys(self) -> Iterable[VariableKey]:
        return self._values.keys()

    def items(self):
        return self._values.items()

    def copy(self) -> "Estimate":
        return Estimate(dict(self._values), self.cost, self.iterations)

    def series(self, kind: str) -> np.ndarray:
        """Stack the blocks of one kind in ascending instant order."""
        keys = sorted(k for k in self._values if k.kind == kind)
        return np.stack([self._values[k] for k in keys])


def marginal_prior(est: Estimate, key: VariableKey) -> np.ndarray:
    """Converged block value handed to the next window as its prior."""
    if len(est) == 0:
        raise UnknownVariable("empty estimate")
    return est[key].copy()


@dataclass
class SolveStats:
    iterations: int = 0
    accepted_costs: list = field(default_factory=list)


class FactorGraph:
    def __init__(self):
        self._dims: dict[VariableKey, int] = {}
        self._offsets: dict[VariableKey, int] = {}
        self._total = 0
        self.factors: list[Factor] = []

    @property
    def num_variables(self) -> int:
        return len(self._dims)

    @property
    def num_unknowns(self) -> int:
        return self._total

    def add_variable(self, key: VariableKey, dim: int) -> None:
        if key in self._dims:
            raise DuplicateVariable(f"variable {key} already added")
        if dim < 1:
            raise ValueError(f"variable {key}: dim must be >= 1")
        self._dims[key] = int(dim)
        self._offsets[key] = self._total
        self._total += int(dim)

    def add_factor(self, factor: Factor) -> None:
        for key in factor.keys:
            if key not in self._dims:
                raise UnknownVariable(f"factor {factor.kind!r} references unknown {key}")
        self.factors.append(factor)

    def cost(self, est: Estimate) -> float:
        total = 0.0
        for idx, factor in enumerate(self.factors):
            r = factor.residual([est[k] for k in factor.keys])
            if not np.all(np.isfinite(r)):
                raise NumericalFault(
                    f"factor #{idx} ({factor.kind}) produced a non-finite residual"
                )
            total += float(r @ r) / factor.variance
        return total

    def linearize(self, est: Estimate) -> tuple[sp.csr_matrix, np.ndarray, float]:
        """Normal equations (H, g) and cost at the current estimate."""
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        g = np.zeros(self._total)
        cost = 0.0
        for idx, factor in enumerate(self.factors):
            values = [est[k] for k in factor.keys]
            r = factor.residual(values)
            jac = factor.jacobian(values)
            if len(jac) != len(factor.keys):
                raise ValueError(
                    f"factor #{idx} ({factor.kind}) returned {len(jac)} Jacobian "
                    f"blocks for {len(factor.keys)} keys"
                )
            w = 1.0 / factor.variance
            if not np.all(np.isfinite(r)):
                raise NumericalFault(
                    f"factor #{idx} ({factor.kind}) produced a non-finite residual"
                )
            cost += float(r @ r) * w
            blocks = []
            for key, J in zip(factor.keys, jac):
                Jc = sp.csr_matrix(J)
                if Jc.shape != (factor.dim, self._dims[key]):
                    raise ValueError(
                        f"factor #{idx} ({factor.kind}): Jacobian block for {key} "
                        f"has shape {Jc.shape}, expected {(factor.dim, self._dims[key])}"
                    )
                if not np.all(np.isfinite(Jc.data)):
                    raise NumericalFault(
                        f"factor #{idx} ({factor.kind}) produced a non-finite Jacobian"
                    )
                blocks.append((key, Jc))
            for key_a, Ja in blocks:
                g[self._offsets[key_a]: self._offsets[key_a] + self._dims[key_a]] += (
                    Ja.T @ r
                ) * w
                for key_b, Jb in blocks:
                    Hab = (Ja.T @ Jb).tocoo() * w
                    rows.append(Hab.row + self._offsets[key_a])
                    cols.append(Hab.col + self._offsets[key_b])
                    vals.append(Hab.data)
        H = sp.coo_matrix(
            (
                np.concatenate(vals) if vals else np.empty(0),
                (
                    np.concatenate(rows) if rows else np.empty(0, dtype=int),
                    np.concatenate(cols) if cols else np.empty(0, dtype=int),
                ),
            ),
            shape=(self._total, self._total),
        ).tocsr()
        return H, g, cost

    def _apply_step(self, est: Estimate, delta: np.ndarray) -> Estimate:
        values = {
            key: est[key] + delta[off: off + self._dims[key]]
            for key, off in self._offsets.items()
        }
        return Estimate(values)

    def optimize(
        self,
        init: Estimate | Mapping[VariableKey, np.ndarray],
        max_iterations: int = 100,
        cost_tolerance: float = 1e-9,
        initial_damping: float = 1e-4,
        max_rejects: int = 50,
    ) -> Estimate:
        """Levenberg-Marquardt to a local minimum of the whitened cost."""
        est = init if isinstance(init, Estimate) else Estimate(dict(init))
        for key in self._dims:
            if key not in est:
                raise UnknownVariable(f"initial estimate misses {key}")
        stats = SolveStats()
        lam = initial_damping
        H, g, cost = self.linearize(est)
        if not np.isfinite(cost):
            raise NonFinite("initial cost is not finite")
        stats.accepted_costs.append(cost)
        for it in range(max_iterations):
            diag = H.diagonal()
            if np.any(diag <= 0.0):
                bad = int(np.argmin(diag))
                key = self._key_at(bad)
                raise SingularSystem(
                    f"unconstrained variable block {key} (zero normal-equation "
                    "diagonal; gauge freedom)"
                )
            accepted = False
            for _ in range(max_rejects):
                damped = (H + sp.diags(lam * diag)).tocsc()
                try:
                    delta = spla.spsolve(damped, -g)
                except RuntimeError:
                    delta = np.full(self._total, np.nan)
                if np.all(np.isfinite(delta)):
                    trial = self._apply_step(est, delta)
                    trial_cost = self.cost(trial)
                    if np.isfinite(trial_cost) and trial_cost <= cost:
                        accepted = True
                        break
                lam *= 10.0
                if lam > 1e14:
                    raise SingularSystem("damping exhausted; system is singular")
            if not accepted:
                break  # no improving step exists; treat as converged
            lam = max(lam * 0.5, 1e-15)
            decrease = cost - trial_cost
            est, cost = trial, trial_cost
            stats.iterations = it + 1
            stats.accepted_costs.append(cost)
            if decrease <= cost_tolerance * max(cost, 1e-300):
                break
            H, g, cost_check = self.linearize(est)
            cost = cost_check
        est.cost = cost
        est.iterations = stats.iterations
        est.accepted_costs = stats.accepted_costs
        return est

    def _key_at(self, flat_index: int) -> VariableKey:
        for key, off in self._offsets.items():
            if off <= flat_index < off + self._dims[key]:
                return key
        raise IndexError(flat_index)

    def dump_system(self, est: Estimate, h_path: str, g_path: str) -> None:
        """Write the normal equations in Matrix-Market text for inspection."""
        from scipy.io import mmwrite

        H, g, _ = self.linearize(est)
        mmwrite(h_path, H.tocoo())
        mmwrite(g_path, sp.coo_matrix(g.reshape(-1, 1)))
