"""Spatio-temporal vehicle re-identification toolkit."""

from .errors import ConfigurationError, FormatError, InputError
from .evaluation import (
    EvalReport,
    FoldMetrics,
    SimilarityMatrix,
    cmc,
    evaluate_method,
    make_folds,
    mean_average_precision,
    rank_gallery,
)
from .fusion import (
    FusionInput,
    FusionModel,
    TrainConfig,
    baseline_product,
    bce_loss,
    build_st_vector,
    build_training_pairs,
    dump_weights,
    forward,
    forward_batch,
    gradient_check,
    hidden_layer_width,
    st_windows,
    train,
)
from .observations import Observation, group_by_vehicle
from .simulate import AmbiguityReport, RoadEdge, SimConfig, SimOutput, ambiguity_report, simulate
from .topology import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    HistogramGeometry,
    TopologyModel,
    TransitionHistogram,
    adaptive_sigma,
    build_histograms,
    estimate_pdf,
    estimate_topology,
    gaussian_kernel,
    lookup_probability,
)

__version__ = "0.1.0"
