"""Quantum geometry of parameter space for curved configuration spaces.

The package computes the generalized quantum geometric tensor, the quantum
metric, the modified Berry connection and the Berry curvature for quantum
systems whose configuration-space metric depends on the system parameters.
It ships three built-in model systems, a dressed-state cross-check route, a
spectral-sum (perturbation-basis) evaluation, parameter-grid scans with CSV
output, and an invariant check suite.
"""

from .geometry import (IntegrationDomain, InvariantViolation, MetricField,
                       Transform, deformation_vector, metric_det,
                       metric_inverse)
from .models import (InadmissibleParameters, MODEL_NAMES, ModelDefinition,
                     SpectrumData, apply_hamiltonian, energy, get_model,
                     ground_state, hamiltonian_residual,
                     perturbative_ground_state, sample_interior_points)
from .quadrature import (ConvergenceError, EvaluationError, IntegralResult,
                         QuadratureSettings, inner_product,
                         inner_product_result, integrate_1d, integrate_2d)
from .states import (DerivativeInfo, ParametricWaveFunction, normalize,
                     param_derivative)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
