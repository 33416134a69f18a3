"""Growth-optimal portfolios for piecewise-constant jump-diffusion markets.

The library models a market by predictable characteristic triplets (b, c, nu)
on a deterministic operational clock under polyhedral convex constraints, and
provides:

* detection of unbounded increasing profit (an LP over the
  immediate-arbitrage cone meeting the constraints' recession cone);
* the growth-optimal (numeraire) portfolio per segment by concave
  maximization, with an approximating ladder for heavy jump tails;
* certification via the relative-drift criterion rel(pi|rho) <= 0 and the
  psi integrability record;
* a seeded, bit-reproducible Monte Carlo engine with supermartingale tests,
  deviation asymptotics, and two classical demonstration experiments.
"""
from ._backend import backend_name
from .arbitrage import LpFailureError, NuipReport, detect_uip, is_immediate_arbitrage
from .constraints import (ConstraintSet, InfeasibleConstraintsError, NullSpace,
                          cone_rays, constraints_from_json, constraints_to_json,
                          contains, intersect, natural_constraints, null_space,
                          polyhedron_vertices, project, recession_cone)
from .market import (Check, DensitySpec, IntegralResult, JumpAtom, JumpMeasure,
                     MarketSpec, OperationalClock, Segment, Triplet,
                     ValidationReport, clock_integral, discretize_density,
                     drift_rate, load_market, market_from_json, market_to_json,
                     validate_market, validate_triplet)
from .simulation import (BankruptcyError, BesselReport, DeviationReport,
                         PathBundle, SupermartingaleReport, UpbrReport,
                         WealthEnsemble, WealthPath, asymptotic_deviation,
                         bessel_arbitrage_demo, checkpoint_indices,
                         deviation_rate, iter_path_chunks, q_a,
                         relative_wealth_identity, simulate_paths,
                         supermartingale_test, upbr_demo,
                         wealth_from_increments)
from .solver import (Certificate, InvalidMarketError,
                     LadderNonconvergenceError, NonconvergenceError,
                     NumeraireSolution, Portfolio, SegmentSolution,
                     SolverOptions, UipFoundError, growth_gradient,
                     growth_rate, is_admissible, psi_rho, rel_rate,
                     solve_numeraire, solve_segment, verify_solution)

__version__ = "1.0.0"

__all__ = [name for name in dir() if not name.startswith("_")]
