"""Closed-form graph-based head interpolation.

Estimates the full head vector from the sensed subset by solving

    (mu_L * L D^-2 L + S_p' S_p) h = S_p' h_s

once per reading; the sparse factorization of the left-hand side is
reused across instants. The same operator interpolates head-residual
vectors, which is what the localization stage relies on.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystem, ValidationError
from .network import SensorLayout, StructMatrices


class Interpolator:
    """Factorized interpolation operator for one network + sensor layout."""

    def __init__(self, struct: StructMatrices, layout: SensorLayout, mu_L: float = 1.0):
        if layout.n != struct.n:
            raise ValidationError("sensor layout and matrices disagree on n")
        if layout.n_s < 1:
            raise ValidationError("need at least one pressure sensor")
        if mu_L < 0:
            raise ValidationError("mu_L must be >= 0")
        if mu_L == 0 and layout.n_s < struct.n:
            raise ValidationError("mu_L = 0 requires every node to be sensed")
        self.mu_L = float(mu_L)
        self.layout = layout
        self.n = struct.n
        inv_deg = 1.0 / struct.degrees**2
        smoothing = struct.L @ sp.diags(inv_deg) @ struct.L
        M = (self.mu_L * smoothing + layout.S_p.T @ layout.S_p).tocsc()
        self._M = M
        try:
            self._factor = spla.splu(M)
        except RuntimeError as exc:
            raise SingularSystem(f"interpolation system is singular: {exc}") from exc
        self._check_factorization()

    def _check_factorization(self) -> None:
        # splu can succeed numerically on (near-)singular input; verify
        # with one solve against a random right-hand side.
        rng = np.random.default_rng(0)
        rhs = rng.standard_normal(self.n)
        x = self._factor.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SingularSystem("interpolation system is singular")
        resid = np.max(np.abs(self._M @ x - rhs))
        if resid > 1e-6 * max(1.0, np.max(np.abs(rhs))):
            raise SingularSystem(
                f"interpolation system is numerically singular (residual {resid:.2e})"
            )

    def interpolate(self, h_s: np.ndarray) -> np.ndarray:
        """Full n-vector estimate from sensed values.

        Accepts a single (n_s,) reading or a (T, n_s) batch; linear in
        the input, so it applies to residual differences as well.
        """
        h_s = np.asarray(h_s, dtype=float)
        batched = h_s.ndim == 2
        if (batched and h_s.shape[1] != self.layout.n_s) or (
            not batched and h_s.shape != (self.layout.n_s,)
        ):
            raise ValidationError(
                f"expected {self.layout.n_s} sensed values, got shape {h_s.shape}"
            )
        rhs = self.layout.S_p.T @ (h_s.T if batched else h_s)
        out = self._factor.solve(np.asarray(rhs))
        return out.T if batched else out

    def matrix(self) -> np.ndarray:
        """Materialize P_s (n x n_s), column by column: for inspection only."""
        return self._factor.solve(np.asarray(self.layout.S_p.T.todense()))

    def normal_residual(self, h_s: np.ndarray, h_hat: np.ndarray) -> float:
        """Infinity norm of M @ h_hat - S_p' h_s (a solve-quality check)."""
        return float(np.max(np.abs(self._M @ h_hat - self.layout.S_p.T @ h_s)))


def build_interpolator(
    struct: StructMatrices, layout: SensorLayout, mu_L: float = 1.0
) -> Interpolator:
    return Interpolator(struct, layout, mu_L)
