"""Desk-scale federated learning simulation."""

from .aggregators import (
    ClipNoiseAggregator,
    MeanAggregator,
    QuantizeAggregator,
    clip_noise_aggregator,
    mean_aggregator,
    quantize_aggregator,
)
from .algorithms import (
    ClientUpdateConfig,
    FedOpt,
    RoundDiagnostics,
    RoundState,
    client_update,
    fed_avg,
    fed_opt,
    fedavg_client_spec,
)
from .data import (
    Batch,
    BatchSpec,
    ClientDataset,
    FederatedData,
    batch,
    client_stats,
    padded_batch,
    sample_clients,
    shuffle_repeat_batch,
)
from .metrics import Accuracy, CrossEntropy, MeanSquaredError, Metric, MetricReport, evaluate
from .models import Model, linear_regression_model, logistic_classifier_model, mlp_model
from .optimizers import adagrad, adam, sgd, yogi
from .runner import ClientWorkItem, ForEachClientSpec, for_each_client, timing_probe
from .tensor import Rng, rng_split, tree_map, tree_weighted_sum, tree_zip_map

__version__ = "0.1.0"
