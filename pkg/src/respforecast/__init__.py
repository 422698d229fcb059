"""Online-learning RNN forecasting of respiratory marker motion.

Four online trainers for single-hidden-layer recurrent networks (exact
influence propagation, a rank-one unbiased estimator, a compressed diagonal
approximation, and linear synthetic gradients), classical baselines, the
five-way accuracy/jitter metric suite, and a grid-search experiment harness.
"""

from .baselines import (
    LatestPositionForecaster,
    LinRegModel,
    SvrModel,
    linreg_fit,
    no_prediction,
    svr_fit,
    svr_predict,
)
from .harness import (
    ALGORITHMS,
    GridSpec,
    HyperParams,
    SweepSpec,
    cross_validate,
    evaluate,
    resample_to,
    seed_sequence,
    steps_from_seconds,
    sweep,
    time_profile,
)
from .metrics import MetricsReport, RunMetrics, aggregate_runs, compute_metrics
from .rnn import (
    NumericError,
    RnnModel,
    StepOutput,
    apply_update,
    clip_gradient,
    forward_step,
    init_weights,
    load_model,
    output_layer_gradient,
    pack_gradient,
    pack_weights,
    save_model,
    state_loss_gradient,
    unpack_weights,
)
from .sequences import (
    DegenerateDataError,
    MarkerSequence,
    NormStats,
    ParseError,
    SequencePartition,
    WindowSet,
    WindowedExample,
    denormalize,
    downsample,
    fit_norm_stats,
    load_sequence,
    make_windows,
    normalize,
    save_sequence,
    upsample_with_noise,
)
from .trainers import (
    DniTrainer,
    FrozenLayerTrainer,
    LmsTrainer,
    RtrlTrainer,
    Snap1Trainer,
    UoroTrainer,
)

__version__ = "0.1.0"
