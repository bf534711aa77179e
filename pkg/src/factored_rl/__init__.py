"""Learning in factored finite-horizon MDPs with Hoeffding and Bernstein bonuses."""
from .agents import RunConfig, RunRecord, run_agent, run_fmdp_bf, run_fmdp_ch, run_flat_ucbvi_ch
from .environment import (
    Simulator,
    Trajectory,
    gen_parallel_hard_mdps,
    gen_production_line,
    gen_random_fmdp,
    gen_tree_bandit_instance,
    run_episode,
)
from .estimation import Estimators, update_from_episode
from .model import (
    FactorDims,
    FmdpSpec,
    Scope,
    decode_index,
    encode_index,
    flatten_to_flat_mdp,
    load_spec,
    make_spec,
    project_scope,
    save_spec,
    validate_spec,
)
from .oracle import evaluate_policy, exact_optimal_values

__version__ = "0.1.0"
