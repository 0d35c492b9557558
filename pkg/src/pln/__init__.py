"""Return maps around invariant tori of systems with commuting integrals.

Set ``PLN_BACKEND=numpy`` to run the integrator without numba; it is read on every call.
"""

from .continuation import (ContinuationFamily, LiftContext, StepPolicy, continue_family,
                           dpsi_df, lift_torus, newton_fixed_point, tangent_predictor,
                           verify_invariance, verify_isotropy)
from .dynsys import (FlowResult, HamiltonianSystem, VectorFieldSystem, check_commutation,
                     check_independence, flow, hamiltonian_vector_field, lie_bracket)
from .errors import *  # noqa: F401,F403
from .frequency import FrequencyMatrix, determinant_criterion, q_values
from .models import BUILTINS, ModelBundle, build_builtin, load_model
from .oscillators import (ActionPolynomial, OscillatorModel, build_phase_model,
                          floquet_and_condition_n, solve_winding, solve_winding_shifted)
from .pnmap import (HomotopyClass, PNLinearization, SectionFrame, basepoint_conjugacy_check,
                    build_metric_section, build_section, class_dependence_report,
                    find_periodic_combination, linearize_pn_map, pn_map, pn_map_metric_variant)
from .polynomial import Polynomial
from .torus import TorusGrid

__version__ = "0.1.0"
