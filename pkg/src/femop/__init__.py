"""Energy-minimization operator learning for parametrized PDEs on P1
finite elements: an MLP maps problem parameters to finite-element DOFs and
is trained by minimizing the expected discrete energy, with classical FEM
solvers as oracles and as Newton warm-start consumers."""

from .mesh import (TriMesh, ElementGeometry, build_structured_rect,
                   build_beam_mesh, element_geometry, sample_element_batch)
from .fem import (NodalField, QuadratureRule, TRI_MIDPOINT, eval_p1, scatter,
                  gather, l2_norm, h1_seminorm, h1_norm, zero_field)
from .problems import (SpikeParams, GrfParams, ForceParams, NeoHookeanMaterial,
                       SpikePoissonModel, GrfPoissonModel, NeoHookeanBeamModel,
                       spike_coefficient, total_energy)
from .grf import (KlBasis, assemble_covariance, truncated_eig, build_kl_basis,
                  kl_field, grf_coefficient, sample_xi)
from .nn import (Mlp, AdamState, elu, elu_prime, forward, backward, adam_step,
                 init_mlp, save_checkpoint, load_checkpoint)
from .training import (TrainConfig, TrainResult, build_problem,
                       sample_parameters, loss_and_grad, lr_at, train)
from .solvers import (NewtonReport, PoissonSystem, assemble_poisson,
                      fem_solve_poisson, solve_poisson_model, newton_solve,
                      curl_experiment, SolverError)
from .evaluation import (ErrorReport, relative_errors, omega_relative_errors,
                         histogram_csv, qoi_l2, qoi_point)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
