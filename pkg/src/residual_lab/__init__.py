"""residual_lab: KAN vs MLP residual branches inside a hard-constrained
recurrent integrator, with matching evaluation and sweep tooling."""

from .dynamics import (
    Dataset,
    DivergenceError,
    OscillatorSpec,
    State,
    Trajectory,
    duffing,
    full_rhs,
    generate_dataset,
    load_dataset,
    oscillator,
    rk4_step,
    save_dataset,
    vanderpol,
)
from .evaluation import (
    CandidateDictionary,
    GridSpec,
    SurfaceSample,
    SymbolicFit,
    bootstrap_ci,
    discovery_r2,
    export_surface,
    polynomial_dictionary,
    rollout_mse,
    sample_surface,
    stlsq_fit,
    test_mse,
)
from .harness import (
    ARCH_REGISTRY,
    ExperimentConfig,
    PresetConfig,
    SweepResult,
    aggregate_tables,
    builtin_configs,
    config_fingerprint,
    load_config_file,
    run_sweep,
)
from .hybridcell import (
    HybridSystem,
    OracleResidual,
    RolloutWindow,
    bptt_loss,
    hybrid_step,
    make_windows,
    oracle_system,
    rollout,
    teacher_forcing_loss,
)
from .netcore import (
    KanArch,
    MlpArch,
    ResidualBranch,
    SplineSpec,
    branch_forward,
    branch_gradients,
    branch_input_jacobian,
    init_params,
    l1_penalty,
    load_branch,
    new_branch,
    param_count,
    product_construction,
    save_branch,
)
from .splines import bspline_basis, fit_coefficients, knot_vector
from .trainer import TrainConfig, TrainReport, adam_step, train, verify_gradients

__version__ = "0.1.0"
