"""Explicit upwind finite volumes for the continuity equation, with its
Markov-chain reading and weak error metrics."""

from .data import PowerSingularity, checkerboard
from .estimator import UpwindTransformer
from .harness import (ErrorRecord, RateFit, StudyConfig, StudyResult, convergence_study,
                      export_csv, fit_rate, optimality_example, read_csv)
from .mesh import Boundary, CartesianMesh, EdgeId, Side, build_mesh, locate_cell, tau, unit_torus
from .metrics import hminus1_norm, kr_fields, l_norm_error, w1_1d, w1_fields
from .scheme import (CellField, CFLViolation, TransitionTable, assemble_transitions,
                     binomial_closed_form, discretize_initial, run, step)
from .stochastic import (MartingaleTrace, ParticleEnsemble, empirical_law_check, jump,
                         martingale_scaling, simulate)
from .transport import (DiscreteMeasure, TransportPlan, coupling_upper_bound, kr_distance,
                        solve_transport, transshipment)
from .velocity import (EdgeFluxSet, Quadrature, VelocityField, assemble_fluxes, builtin_constant,
                       builtin_sobolev_shear, cfl_audit, edge_flux, net_flow)

__all__ = [
    "assemble_fluxes", "assemble_transitions", "binomial_closed_form", "Boundary", "build_mesh",
    "builtin_constant", "builtin_sobolev_shear", "CartesianMesh", "CellField", "cfl_audit",
    "CFLViolation", "checkerboard", "convergence_study", "coupling_upper_bound", "DiscreteMeasure",
    "discretize_initial", "edge_flux", "EdgeFluxSet", "EdgeId", "empirical_law_check",
    "ErrorRecord", "export_csv", "fit_rate", "hminus1_norm", "jump", "kr_distance", "kr_fields",
    "l_norm_error", "locate_cell", "martingale_scaling", "MartingaleTrace", "net_flow",
    "optimality_example", "ParticleEnsemble", "PowerSingularity", "Quadrature", "RateFit",
    "read_csv", "run", "Side", "simulate", "solve_transport", "step", "StudyConfig", "StudyResult",
    "tau", "TransitionTable", "TransportPlan", "transshipment", "unit_torus", "UpwindTransformer",
    "VelocityField", "w1_1d", "w1_fields",
]

__version__ = "0.1.0"
