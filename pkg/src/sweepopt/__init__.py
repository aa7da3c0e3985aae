"""Controlled perturbed sweeping processes over polyhedral moving sets:
catching-up simulation, discrete optimization, dual certificates, and the
corridor crowd-motion solver."""

from . import errors
from .certificates import (CheckReport, ContinuousCertificate,
                           DiscreteCertificate, build_discrete_certificate,
                           check_continuous, check_discrete,
                           continuous_certificate, limit_certificate)
from .costs import RunningCost, TerminalCost
from .crowd import (CrowdConfig, CrowdSolution, contact_time,
                    crowd_to_sweeping, proportionality_relations,
                    simulate_crowd, solve_crowd, velocity_match)
from .dynamics import (DiscreteTrajectory, Mesh, PathOnGrid, Perturbation,
                       SweepingProblem, apriori_bounds, catching_up,
                       eta_endpoint, eta_from_trajectory)
from .geometry import (ActiveSet, ConeDecomposition, FeaturedSets, Polyhedron,
                       active_set, coderivative_generators, decompose_normal,
                       featured_sets, project)
from .nnls import nnls
from .optimizer import (DiscreteSolution, SolveOptions, refine_grid,
                        solve_discrete)
from .transcription import (DiscreteProblem, Packing, assemble_cost,
                            constraint_residuals, discretize, feasible_seed)

__all__ = [
    "ActiveSet", "CheckReport", "ConeDecomposition", "ContinuousCertificate",
    "CrowdConfig", "CrowdSolution", "DiscreteCertificate", "DiscreteProblem",
    "DiscreteSolution", "DiscreteTrajectory", "FeaturedSets", "Mesh",
    "Packing", "PathOnGrid", "Perturbation", "Polyhedron", "RunningCost",
    "SolveOptions", "SweepingProblem", "TerminalCost", "active_set",
    "apriori_bounds", "assemble_cost", "build_discrete_certificate",
    "catching_up", "check_continuous", "check_discrete",
    "coderivative_generators", "constraint_residuals", "contact_time",
    "continuous_certificate", "crowd_to_sweeping", "decompose_normal",
    "discretize", "errors", "eta_endpoint", "eta_from_trajectory",
    "feasible_seed", "featured_sets", "limit_certificate", "nnls", "project",
    "proportionality_relations", "refine_grid", "simulate_crowd",
    "solve_crowd", "solve_discrete", "velocity_match",
]
