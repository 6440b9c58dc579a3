"""Initial data used by the studies."""

from __future__ import annotations

import numpy as np


def checkerboard(x):
    """+1 on ``[0,1/2)^2 U [1/2,1)^2`` and -1 elsewhere (unit-periodic)."""
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    low = x < 0.5
    return np.where(low[..., 0] == low[..., 1], 1.0, -1.0)


class PowerSingularity:
    """``rho0(x) = (x - shift)^(-s)`` on ``(shift, shift + 1]`` and 0 elsewhere, in 1-D.

    Cell averages are computed from the antiderivative, so the integrable
    singularity at the left end is handled exactly.
    """

    def __init__(self, s: float, shift: float = 0.0):
        if not 0 <= s < 1:
            raise ValueError(f"exponent s must lie in [0, 1), got {s}")
        self.s = float(s)
        self.shift = float(shift)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim and x.shape[-1] == 1:
            x = x[..., 0]
        y = x - self.shift
        inside = (y > 0) & (y <= 1)
        return np.where(inside, np.where(inside, y, 1.0) ** -self.s, 0.0)

    def primitive(self, x):
        """``int_{-inf}^x rho0``."""
        y = np.clip(np.asarray(x, dtype=float) - self.shift, 0.0, 1.0)
        return y ** (1 - self.s) / (1 - self.s)

    def cell_averages(self, mesh):
        if mesh.dim != 1:
            raise ValueError("PowerSingularity is a 1-D datum")
        h = mesh.widths[0]
        edges = np.arange(mesh.shape[0] + 1) * h
        F = self.primitive(edges)
        return np.diff(F) / h

    def translated(self, distance: float) -> "PowerSingularity":
        """The datum moved right by ``distance`` (exact solution of constant advection)."""
        return PowerSingularity(self.s, self.shift + distance)

    @property
    def mass(self) -> float:
        return 1.0 / (1 - self.s)
