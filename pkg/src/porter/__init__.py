"""Decentralized nonconvex optimization with gradient clipping, error-feedback
compression, stochastic gradient tracking and local differential privacy."""

from porter.clip import ClipMode, piecewise_clip, smooth_clip
from porter.compress import CompressorSpec, compress_matrix, random_k, top_k
from porter.engine import (
    HyperParams,
    PorterState,
    init_state,
    local_gradients_dp,
    local_gradients_gc,
    step,
    theoretical_hyperparams,
)
from porter.metrics import MetricsRecord, Summary, measure, summarize
from porter.privacy import (
    PrivacyBudget,
    check_privacy_feasibility,
    compute_phi_m,
    compute_sigma_p,
)
from porter.topology import (
    Graph,
    MixingMatrix,
    build_er_graph,
    build_named_graph,
    metropolis_weights,
    mixing_rate,
    regularize,
)

__version__ = "0.1.0"
