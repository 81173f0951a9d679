"""Speculative thought-level search: simulator and verification laboratory.

A numpy/scipy library modeling a bi-level speculative thought generator
(draft with a small model, evaluate, reject below an adaptive threshold,
correct with a token-level-speculative large model) inside beam/MCTS tree
search, together with the closed-form quality-preservation bounds and the
Monte Carlo machinery to verify them.
"""

from .analytics import (
    BoundParams,
    acceptance_probability,
    expected_batch_quality,
    expected_excess,
    hazard,
    joint_bound,
    joint_bound_curve,
    lossless_alpha,
    lossless_threshold,
    stepwise_bound,
    truncated_mean,
)
from .bridge import (
    BridgeEndpoint,
    BridgeSuite,
    MockBridgeServer,
    remote_evaluate,
    remote_generate,
)
from .config import ConfigError, ExperimentConfig, load_config
from .core import (
    Evaluator,
    QualitySchedule,
    RngStream,
    Thought,
    ThoughtPath,
    ThoughtSource,
    evaluate,
    step_params,
)
from .experiment import (
    BaselineKind,
    BoundReport,
    ConfigurationError,
    CostModel,
    EnsembleStats,
    Scenario,
    acceptance_rate,
    preservation_probability,
    run_ensemble,
    simulate_latency,
    speedup,
    theta_sweep,
    verify_bounds,
    wilson_interval,
)
from .generation import (
    CorrectionModel,
    GeneratorModel,
    SpsConfig,
    StatisticalSuite,
    TokenModel,
    correct,
    draft_batch,
    sample_thought,
    sps_decode,
    sps_exact_distribution,
)
from .search import (
    EstimationError,
    SearchConfig,
    SearchTrace,
    SpecConfig,
    SpeculativeStepStats,
    ThresholdState,
    ablation_generate,
    beam_search,
    estimate,
    init_threshold,
    mcts_search,
    select_top_b,
    speculative_generate,
    update_threshold,
)

__version__ = "0.1.0"
