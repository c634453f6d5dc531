"""Symbolic regression engine built on gene-pool optimal mixing with
pluggable linkage-learning measures."""

from .dataio import Dataset, SplitPlan, load_csv, make_splits, synth_problem
from .engine import (
    ImprovementTracker,
    Population,
    RunContext,
    RunRecord,
    gom_step,
    has_converged,
    init_half_and_half,
    run_fixed,
    run_generation,
    run_ims,
)
from .evaluator import (
    BudgetExhaustedError,
    EvaluationBudget,
    FitnessValue,
    fitness,
    linear_scale,
    mse,
    r2,
)
from .linkage import (
    FOS,
    BinningRule,
    MeasureKind,
    MeasureState,
    build_fos,
    build_linkage_tree,
    discretize,
    entropy,
    measure_mi,
    measure_mi_adjusted,
    measure_mi_masked,
    measure_node_proximity,
    measure_random,
    measure_subfunction_count,
    mutual_information,
    similarity_matrix,
    univariate_fos,
)
from .template import (
    Alphabet,
    Genotype,
    MalformedGenotypeError,
    OperatorSet,
    ProtectionPolicy,
    Template,
    active_signature,
    build_template,
    compute_activity,
    evaluate,
    to_infix,
)

__version__ = "0.1.0"
