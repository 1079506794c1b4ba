"""Collaborative inference for legacy devices: keep a fixed client
classifier in place and train an edge-side expert together with a deferral
rule that decides, per input, whether the client answers locally or asks
the expert for help."""

__version__ = "0.1.0"

from .data import (
    Dataset,
    GaussianMixtureTask,
    LabeledSample,
    default_task,
    load_csv,
    posterior_eta,
    rotated_task,
    sample_task,
    save_csv,
    split,
)
from .errors import (
    ConfigError,
    ContractError,
    EstimationError,
    IngestionError,
    Learn2HelpError,
)
from .losses import (
    CalibrationSpec,
    CostSpec,
    client_error_prob,
    estimate_px,
    generalized_loss,
    select_alpha,
    surrogate_loss,
    surrogate_partials,
)
from .models import (
    Architecture,
    FixedClient,
    Scorer,
    SgdConfig,
    backward,
    client_confidence,
    forward,
    init_scorer,
    sgd_step,
)
from .oracle import (
    ConditionalPoint,
    bayes_expert,
    bayes_rejector,
    bayes_risk_mc,
    brute_min_conditional,
    calibration_sign_grid,
    closed_form_estar,
    closed_form_rstar,
    conditional_expected_surrogate,
    posterior_cost_compare,
)
from .training import HelpSystem, train_client, train_expert_alone, train_help, train_rejector_only
from .evaluation import (
    CurvePoint,
    EvalReport,
    confidence_baseline_curve,
    cost_sweep,
    evaluate,
    predict,
    random_baseline_curve,
    risk_gap_slope,
)
