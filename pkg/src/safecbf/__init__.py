"""Observer-corrected and volume control barrier function safety filters."""
from .barriers import BarrierSet, BarrierSpec, Mode, SphereSignedDistance, SquaredDistance2D
from .geometry import Ellipsoid, Polytope, solve_mvie
from .observer import ObserverGains
from .plants import PLANTS, DisturbanceSpec
from .qpsolver import QpProblem, QpStatus, solve_qp
from .safety_filters import FilterConfig, Method, SafetyFilter
from .sim import ScenarioConfig, compute_metrics, monte_carlo, run_scenario

__version__ = "0.1.0"
