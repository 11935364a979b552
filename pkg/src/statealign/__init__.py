"""Counterfactual state alignment: deletion benchmarks for online L-BFGS.

The package measures how close cheap deletion interventions land to the
counterfactual optimizer state obtained by replaying an edited event
history, over synthetic drifting streams.
"""
from .bench import (
    ExperimentConfig,
    MethodResult,
    RunResult,
    aggregate,
    experiment1_defaults,
    experiment2_defaults,
    run_experiment1,
    run_experiment2,
    run_grid,
)
from .certify import (
    BoundInputs,
    Certificate,
    calibrate_sigma,
    certificate,
    deviation_bound,
    deviation_bound_trace,
    empirical_contraction,
    inject_noise,
)
from .interventions import (
    DEFAULT_METHOD_IDS,
    InterventionContext,
    InterventionKind,
    InterventionSpec,
    apply,
    parse_intervention,
)
from .metrics import (
    DecayFit,
    MetricTrace,
    ProbeSet,
    auc,
    direct_clearance_time,
    fit_decay_rate,
    make_probes,
    memory_operator_error,
    param_error,
    state_error,
    update_direction_error,
)
from .olbfgs import (
    CurvaturePair,
    MemoryState,
    OptimizerState,
    StepConfig,
    direct_memory_mass,
    initial_state,
    replay,
    restore,
    snapshot,
    step,
    two_loop,
)
from .stream import (
    DeletionMode,
    DeletionSet,
    Event,
    EventOp,
    EventStream,
    LogisticSample,
    QuadraticSample,
    Regime,
    StreamConfig,
    edit_history,
    gen_logistic_stream,
    gen_quadratic_stream,
    generate_stream,
    loss_and_grad,
    loss_hessian,
    read_stream,
    select_deletion_set,
    write_stream,
)

__version__ = "0.1.0"
