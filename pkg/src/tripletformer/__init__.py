"""Tripletformer: probabilistic interpolation of asynchronous time series.

An asynchronous multivariate time series is a set of (time, channel, value)
triplets with no alignment across channels.  The model encodes the observed
triplets with set attention, then answers (time, channel) queries with a
Gaussian mean and standard deviation per query.  Everything runs on a small
reverse-mode autodiff engine over float64 numpy arrays, so results are
deterministic for a fixed seed.
"""

from .attention import (
    FeedForwardParams,
    ImabParams,
    MabParams,
    MhaParams,
    feed_forward,
    imab,
    init_imab,
    init_mab,
    mab,
    multi_head_attention,
    scaled_dot_attention,
)
from .baselines import (
    BaselineModel,
    default_sigma_grid,
    fit_baseline,
    fit_forward_baseline,
    fit_homoscedastic_sigma,
    fit_mean_baseline,
)
from .data import (
    AsTSRecord,
    Batch,
    ChannelStats,
    InterpolationInstance,
    QueryPoint,
    Triplet,
    batch_pad,
    build_sine_dataset,
    encode_context,
    encode_queries,
    infer_channel_count,
    load_jsonl,
    make_random_instance,
    preprocess,
    sample_burst_missing,
    sample_random_missing,
    write_jsonl,
)
from .evaluation import (
    EvalReport,
    ExperimentResult,
    evaluate,
    run_experiment,
    split_records,
)
from .model import (
    GaussianPrediction,
    TripletformerConfig,
    TripletformerParams,
    decoder_forward,
    encoder_forward,
    init_params,
    load_checkpoint,
    predict,
    predict_distribution,
    save_checkpoint,
)
from .rng import Xoshiro256StarStar, derive_seed, spawn
from .tensor import GradTape, Tensor, backward, grad_check, op_counters
from .training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    batch_loss,
    full_loss_grad_check,
    gaussian_nll,
    loss,
    pooled_nll,
    random_search,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AsTSRecord",
    "BaselineModel",
    "Batch",
    "ChannelStats",
    "EvalReport",
    "ExperimentResult",
    "FeedForwardParams",
    "GaussianPrediction",
    "GradTape",
    "ImabParams",
    "InterpolationInstance",
    "MabParams",
    "MhaParams",
    "QueryPoint",
    "Tensor",
    "TrainConfig",
    "TrainHistory",
    "Triplet",
    "TripletformerConfig",
    "TripletformerParams",
    "Xoshiro256StarStar",
    "adam_step",
    "backward",
    "batch_loss",
    "batch_pad",
    "build_sine_dataset",
    "decoder_forward",
    "default_sigma_grid",
    "derive_seed",
    "encode_context",
    "encode_queries",
    "encoder_forward",
    "evaluate",
    "feed_forward",
    "fit_baseline",
    "fit_forward_baseline",
    "fit_homoscedastic_sigma",
    "fit_mean_baseline",
    "full_loss_grad_check",
    "gaussian_nll",
    "grad_check",
    "imab",
    "infer_channel_count",
    "init_imab",
    "init_mab",
    "init_params",
    "load_checkpoint",
    "load_jsonl",
    "loss",
    "mab",
    "make_random_instance",
    "multi_head_attention",
    "op_counters",
    "pooled_nll",
    "predict",
    "predict_distribution",
    "preprocess",
    "random_search",
    "run_experiment",
    "sample_burst_missing",
    "sample_random_missing",
    "save_checkpoint",
    "scaled_dot_attention",
    "spawn",
    "split_records",
    "train",
    "write_jsonl",
]
