"""AverageTime and LightAverageTime forecasters on a small NumPy autograd core."""

from .autograd import Tensor, apply, backward, grad_check, make_rng, no_grad
from .cluster import Grouping, build_grouping, label_propagation, spearman_matrix, threshold_graph
from .data import SeriesMatrix, SplitSpec, fit_scaler, load_csv, make_windows, split
from .model import (
    ModelConfig,
    ModelParams,
    embed_channels,
    forward,
    init_params,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .revin import revin_denormalize, revin_normalize
from .synth import SynthSpec, generate
from .train import EarlyStopping, MetricsReport, TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"
