"""dG discretisation of the FitzHugh-Nagumo system with POD and POD-DEIM reduced models."""

from .mesh import Mesh, build_square_mesh, face_connectivity_check
from .dg import (
    DGSpace,
    assemble_mass,
    assemble_nonlinear,
    assemble_nonlinear_jacobian,
    assemble_stiffness_sipg,
    project_function,
)
from .fom import FomOperators, build_fom_operators, fom_solve, fom_step, random_initial_condition
from .pod import ReducedBasis, compute_pod_basis, reduce_operators
from .deim import build_deim_operator, deim_basis, deim_error_bound, deim_select, eval_nonlinear_deim
from .rom import DeimNonlinearity, PodNonlinearity, rom_solve, rom_step
from .harness import ExperimentConfig, emit_figures, load_offline, run_offline, run_online

__version__ = "0.1.0"
