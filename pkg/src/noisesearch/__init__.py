"""Verifier-guided inference-time search over diffusion sampler noise.

Spending extra denoising compute on searching the initial-noise space,
steered by a contrastive verifier, trades function evaluations for sample
quality without touching model weights. This package provides the search
strategies, the dual-prompt verifier score, an analytic mixture diffusion
backend for desk-scale experiments, distribution metrics, and a wire
protocol for plugging in real generative backends.
"""

from __future__ import annotations

from ._kernels import BACKEND as KERNEL_BACKEND
from ._version import __version__
from .conformance import CheckResult, run_conformance
from .core import (
    BudgetExhaustedError,
    InvalidDimensionError,
    InvalidParameterError,
    Latent,
    NeighborhoodOrigin,
    NfeLedger,
    PriorOrigin,
    Sample,
    SampleTrace,
    derive_seed,
    perturb,
    prior_batch,
    sample_prior,
    splitmix64,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    build_runtime,
    default_config,
    manifest_for,
    reference_features,
    run_experiment,
    sweep_rows,
    trial_seed,
    write_sweep_csv,
)
from .metrics import (
    CSV_HEADER,
    FrechetError,
    FrechetStats,
    ScalingRow,
    fit_stats,
    frechet_distance,
    scaling_curve,
    write_scaling_csv,
)
from .protocol import (
    PROTOCOL_VERSION,
    BackendConnection,
    BackendDescriptor,
    BackendHost,
    ProtocolError,
    ProtocolServer,
    RemoteBackendError,
    RemoteEmbeddingBackend,
    RemoteSampler,
    TransportError,
    VersionMismatchError,
    toy_backend_host,
)
from .search import (
    IterationRecord,
    SearchConfig,
    SearchReport,
    Strategy,
    naive_sample,
    random_search,
    run_search,
    zero_order_search,
)
from .toydiff import (
    GaussianMixture,
    ToySampler,
    VpSchedule,
    default_mixture,
    denoise,
    denoise_batch,
    log_density,
    score,
)
from .verifier import (
    GRAY_TEMPLATE,
    IR_TEMPLATE,
    BackendError,
    ContrastVerifier,
    DegenerateEmbeddingError,
    EmbeddingBackend,
    PromptPair,
    ScorePair,
    ScoreWeights,
    ToyEmbeddingBackend,
    cosine,
    ir_score,
    score_sample,
)

__all__ = [
    "BackendConnection",
    "BackendDescriptor",
    "BackendError",
    "BackendHost",
    "BudgetExhaustedError",
    "CSV_HEADER",
    "CheckResult",
    "ConfigError",
    "ContrastVerifier",
    "DegenerateEmbeddingError",
    "EmbeddingBackend",
    "ExperimentConfig",
    "ExperimentResult",
    "FrechetError",
    "FrechetStats",
    "GRAY_TEMPLATE",
    "GaussianMixture",
    "IR_TEMPLATE",
    "InvalidDimensionError",
    "InvalidParameterError",
    "IterationRecord",
    "KERNEL_BACKEND",
    "Latent",
    "NeighborhoodOrigin",
    "NfeLedger",
    "PROTOCOL_VERSION",
    "PriorOrigin",
    "PromptPair",
    "ProtocolError",
    "ProtocolServer",
    "RemoteBackendError",
    "RemoteEmbeddingBackend",
    "RemoteSampler",
    "Sample",
    "SampleTrace",
    "ScalingRow",
    "ScorePair",
    "ScoreWeights",
    "SearchConfig",
    "SearchReport",
    "Strategy",
    "ToyEmbeddingBackend",
    "ToySampler",
    "TransportError",
    "VersionMismatchError",
    "VpSchedule",
    "__version__",
    "build_runtime",
    "cosine",
    "default_config",
    "default_mixture",
    "denoise",
    "denoise_batch",
    "derive_seed",
    "fit_stats",
    "frechet_distance",
    "ir_score",
    "log_density",
    "manifest_for",
    "naive_sample",
    "perturb",
    "prior_batch",
    "random_search",
    "reference_features",
    "run_conformance",
    "run_experiment",
    "run_search",
    "sample_prior",
    "scaling_curve",
    "score",
    "score_sample",
    "splitmix64",
    "sweep_rows",
    "toy_backend_host",
    "trial_seed",
    "write_scaling_csv",
    "write_sweep_csv",
    "zero_order_search",
]
