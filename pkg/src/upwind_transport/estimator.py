"""scikit-learn style wrapper around the scheme."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_cell_data, check_positive
from .harness import resolve_field
from .mesh import unit_torus
from .scheme import CellField, assemble_transitions, num_steps, run, step
from .velocity import assemble_fluxes


class UpwindTransformer(BaseEstimator, TransformerMixin):
    """Advect cell fields on the periodic unit square (or circle) for a time ``T``.

    Each row of ``X`` holds the cell values of one field, flattened
    row-major.  ``fit`` builds the mesh and the jump probabilities;
    ``transform`` runs the upwind scheme on every row.

    Parameters
    ----------
    field : str or VelocityField, default="constant"
        ``"constant"``, ``"sobolev"``, ``"zero"`` or a field instance.
    cells : int, default=32
        Cells per axis.
    dt_ratio : float, default=0.25
        Time step as a multiple of the cell width.
    T : float, default=1.0
        Advection time; must be a multiple of the time step.

    Attributes
    ----------
    mesh_ : CartesianMesh
    dt_ : float
    n_steps_ : int
    n_features_in_ : int
    """

    def __init__(self, field="constant", cells=32, dt_ratio=0.25, T=1.0):
        self.field = field
        self.cells = cells
        self.dt_ratio = dt_ratio
        self.T = T

    def fit(self, X=None, y=None):
        check_positive("cells", self.cells, integer=True)
        check_positive("dt_ratio", self.dt_ratio)
        field = resolve_field(self.field)
        self.field_ = field
        self.mesh_ = unit_torus(self.cells, dim=field.dim)
        self.dt_ = self.dt_ratio * self.mesh_.widths[0]
        self.n_steps_ = num_steps(self.T, self.dt_)
        # assembling once also audits the CFL condition up front
        self.transitions_ = assemble_transitions(assemble_fluxes(field, self.mesh_, 0.0, self.dt_),
                                                 self.mesh_, self.dt_)
        self.n_features_in_ = self.mesh_.num_cells
        if X is not None:
            check_cell_data(X, self.n_features_in_)
        return self

    def _advance(self, X, field):
        X = check_cell_data(X, self.n_features_in_)
        out = np.empty_like(X)
        for i, row in enumerate(X):
            rho = CellField(self.mesh_, row.reshape(self.mesh_.shape))
            if field.stationary and field is self.field_:
                for _ in range(self.n_steps_):
                    rho = step(rho, self.transitions_)
            else:
                rho = run(rho, field, self.mesh_, self.dt_, self.T, keep="final")[0]
            out[i] = rho.values.ravel()
        return out

    def transform(self, X):
        """Fields after time ``T``."""
        check_is_fitted(self, "mesh_")
        return self._advance(X, self.field_)

    def inverse_transform(self, X):
        """Advect with the reversed field for time ``T``.

        This inverts the continuous flow; the discrete scheme only recovers
        the input up to its numerical diffusion.
        """
        check_is_fitted(self, "mesh_")
        return self._advance(X, self.field_.negated())
