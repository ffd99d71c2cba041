"""qslab: numerical laboratory for absorbed finite Markov chains.

Computes quasi-stationary objects (decay rate, quasi-stationary law, right
eigenfunction, Q-process, quasi-ergodic law, asymptotic variance) exactly by
linear algebra, and checks conditioned central-limit behaviour both by
deterministic matrix-exponential oracles and by reproducible Monte Carlo.
"""

__version__ = "0.1.0"

from .chain_model import (
    AbsorbedChain,
    ModelBundle,
    WeightFunction,
    bd5,
    build_birth_death,
    emit_model_config,
    load_model_config,
    m2asym,
    m2sym,
    resolve_model,
    validate_chain,
    validate_initial_law,
)
from .spectral import (
    ErgodicityCertificate,
    SpectralTriple,
    certify_ergodicity,
    default_time_grid,
    solve_spectral,
    weighted_norm,
)
from .qprocess import (
    ConditionalGapReport,
    QProcessChain,
    check_q_ergodicity,
    conditional_marginal,
    conditional_vs_q_gap,
    fit_gap_rate,
    h_transform,
    q_marginal,
)
from .variance_clt import (
    AdditiveObservable,
    ConstantsTable,
    MomentReport,
    VarianceResult,
    charfun_taylor_moments,
    check_even_moment_limit,
    check_odd_moment_decay,
    check_uniform_charfun_bound,
    constants_table,
    exact_conditional_charfun,
    exact_conditional_moments,
    make_observable,
    sigma2_poisson,
    sigma2_quadrature,
    sup_over_weight_ball,
)
from .montecarlo import (
    EmpiricalDistribution,
    Trajectory,
    conditional_clt_sample,
    jump_frequency_counts,
    kolmogorov_distance,
    philox_stream,
    quasi_ergodic_check,
    simulate_absorbed,
    simulate_qprocess,
)
from . import errors
