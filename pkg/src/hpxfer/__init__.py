"""Hyperparameter transfer engine and per-module multiplier search toolkit."""

from hpxfer.scaling import (
    BaseHyperParams,
    HPKind,
    Parameterisation,
    ResolvedHyperParams,
    ScaleRatios,
    TensorDescriptor,
    TensorRole,
    adamlh_lambda_multiplier,
    classify_tensor,
    residual_multiplier,
    resolve,
    scale_factor,
)
from hpxfer.sde import (
    DecayVariant,
    RMSPropWConfig,
    SDEMultipliers,
    batch_multipliers,
    combined_multipliers,
    horizon_multipliers,
    simulate_rmspropw,
)
from hpxfer.per_module import (
    FullMultiplierGrid,
    ModuleType,
    ModuleTypeTaxonomy,
    MultiplierKind,
    PerModuleMultipliers,
    compose,
    expand_kronecker,
    free_parameter_count,
    interpolate_depth,
    project_to_kronecker,
    project_to_typed_only,
    reference_layouts,
    reference_taxonomy,
)
from hpxfer.search import (
    SearchSpace,
    TrialRecord,
    TrialResult,
    TrialStatus,
    TrustRegionState,
    resume_search,
    run_search,
    synthetic_objective,
)
from hpxfer.model import DeskTransformer, ModelConfig
from hpxfer.optim import PerTensorAdamW
from hpxfer.training import (
    TrainConfig,
    coordinate_check,
    lr_transfer_sweep,
    train,
)
from hpxfer.schedules import (
    Schedule,
    ScheduleGrid,
    best_schedule_per_horizon,
    enumerate_schedules,
    schedule_count,
)

__version__ = "0.1.0"
