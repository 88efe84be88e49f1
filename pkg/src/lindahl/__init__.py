"""Lindahl equilibria for public goods, with certificates and core audits."""

from .capped import (CappedSolution, capped_objective, kkt_residuals, recover_prices_capped,
                     solve_capped_native)
from .dynamics import (ConvergenceTrace, PRResult, convergence_bound, eg_objective, md_step,
                       pr_step, recover_prices_uncapped, run_pr, shmyrev_gradient,
                       shmyrev_objective)
from .errors import (ConvergenceError, InfeasibleError, InstanceError, LindahlError,
                     ParseError, UnboundedError, ZeroUtilityError)
from .jsonio import instance_from_json, instance_to_json, splc_from_json, splc_to_json
from .lp import LPResult, lp_solve, vertex_enumeration
from .model import (CapSufficiency, ContributionMatrix, Instance, PriceSystem,
                    check_cap_sufficient, feasibility_report, is_rescaled, rescale_valuations)
from .pabulib import PabulibFile, parse_pabulib, read_pabulib, serialize_pabulib, to_instance
from .projection import dykstra_scalings, kl_divergence, kl_dykstra_project
from .splc import (PlcFunction, SplcInstance, check_well_behaved, harmonize_segments,
                   lift_allocation, reduce_splc)
from .verify import (CoreAuditReport, EquilibriumCertificate, ParetoReport, audit_core,
                     check_pareto, verify_lindahl)

__all__ = ["CappedSolution", "capped_objective", "kkt_residuals", "recover_prices_capped",
           "solve_capped_native", "ConvergenceTrace", "PRResult", "convergence_bound",
           "eg_objective", "md_step", "pr_step", "recover_prices_uncapped", "run_pr",
           "shmyrev_gradient", "shmyrev_objective", "ConvergenceError", "InfeasibleError",
           "InstanceError", "LindahlError", "ParseError", "UnboundedError", "ZeroUtilityError",
           "instance_from_json", "instance_to_json", "splc_from_json", "splc_to_json", "LPResult",
           "lp_solve", "vertex_enumeration", "CapSufficiency", "ContributionMatrix", "Instance",
           "PriceSystem", "check_cap_sufficient", "feasibility_report", "is_rescaled",
           "rescale_valuations", "PabulibFile", "parse_pabulib", "read_pabulib",
           "serialize_pabulib", "to_instance", "dykstra_scalings", "kl_divergence",
           "kl_dykstra_project", "PlcFunction", "SplcInstance", "check_well_behaved",
           "harmonize_segments", "lift_allocation", "reduce_splc", "CoreAuditReport",
           "EquilibriumCertificate", "ParetoReport", "audit_core", "check_pareto", "verify_lindahl"]

__version__ = "0.1.0"
