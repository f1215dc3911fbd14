"""typetree: simulation, analytics, and rate inference for multi-type
random trees (ERM, birth-death with pruning, Yule with mutations)."""

from .branching import (AncestralRates, BdParams, ExtinctionTable, FullTree,
                        ancestral_rates, extinction_probabilities,
                        prune_to_ancestral, simulate_bd, simulate_reconstructed)
from .erm import (ErmParams, UrnRun, UrnState, initial_urn_state, simulate_erm,
                  simulate_urn, simulate_urn_ensemble)
from .erm_analytics import (MomentReport, UrnSpec, clt_covariance_critical,
                            clt_covariance_subcritical, limit_fractions_erm,
                            mean_cherries, mean_leaves, moment_report,
                            urn_matrix, var_cherries)
from .exceptions import (ConditionError, DegenerateTypeError, InferenceError,
                         IrreducibilityError, ModelError, NewickParseError,
                         NumericalError, ParameterError, ResourceError,
                         StateError, TreeStructureError, TypetreeError)
from .harness import ReplicateReport, run_replicates
from .inference import (compare_models, estimate_p_anagenetic,
                        estimate_p_cladogenetic, infer_erm, infer_yule,
                        reconstruction_solvable)
from .orders import IndexOrder, generic_lex, paper_k2
from .tree import Census, TypedTree, census, contract_unary, parse, serialize
from .yule import (LimitFractions, MomentMatrices, RateSchedule, YuleParams,
                   build_moment_matrices, limit_fractions, mean_cherries_ode,
                   mean_leaves_ode, mean_pendants_ode, moments_ode,
                   simulate_yule)

__version__ = "0.1.0"
