"""Offset-free MPC on bilinear Koopman (EDMD) surrogate models."""
from .dictionary import Dictionary, build_monomial_dictionary, lift, project
from .dynamics import (FourTanksParams, IntegrationDomainError, SampledSystem, VdpParams, VectorField,
                       four_tanks_field, make_four_tanks, make_vdp, rk4_step, sampled_step, vdp_field)
from .edmd import (BilinearKoopmanModel, CoordinateTransform, EdmdcModel, SnapshotSet, fit_autonomous,
                   fit_bilinear, fit_edmdc, fit_safedmd, koopman_at, load_model, modeling_error, predict,
                   predict_lifted, save_model)
from .mpc import ControllerState, OcpSolution, OcpSpec, SolverError, mpc_step, solve_ocp
from .observer import ObserverState, observer_init, observer_record, observer_update
from .refcalc import OutputMap, ReferenceCalculationError, ReferencePair, solve_reference

__version__ = "0.1.0"
