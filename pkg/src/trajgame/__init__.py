"""Learning common-coupled trajectory games with a differentiable equilibrium layer."""
from .errors import *  # noqa: F401,F403
from .game_core import (Game, JointTrajectory, MeasureKind, QuadraticGame, StageTerms, TimeGrid,
                        check_potential_identity, mixed_jacobian, potential, potential_gradient,
                        potential_hessian, utility)
from .solver import (Polytope, SolveOptions, SolveReport, Status, find_interior_point,
                     maximize_on_polytope, verify_local_ne)

__version__ = "0.1.0"
