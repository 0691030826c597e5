"""Spatio-temporal blue-noise sample tiles for Monte Carlo animation.

Optimizes tileable sample sets so that, after spatial filtering and temporal
accumulation, rendering error concentrates in high spatio-temporal frequencies
where it is least visible. Ships with a synthetic renderer, a perceptually
weighted error metric, and spectral analysis tools for evaluating tiles.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    EmptySubsetError,
    InvalidInputError,
    InvalidParameterError,
    MagicMismatchError,
    StbnError,
    TableParseError,
    TableValidationError,
    TileFormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .kernels import (
    SpatialKernel,
    SpatioTemporalKernel,
    TaaKernel,
    TemporalPerceptKernel,
    compose,
    convolve_sequence,
    load_kernel_table,
    make_spatial_gaussian,
    make_taa_kernel,
    make_temporal_gaussian,
    make_temporal_percept,
    write_kernel_table,
)
from .percept import (
    apply_taa,
    dft_power,
    error_sequence,
    filter_sequence,
    lowfreq_energy_ratio,
    prelmse,
)
from .sequences import ErrorSequence, FrameSequence, SpectrumImage
from .swgd import (
    FilteredSubset,
    GradientEstimate,
    OptimizeResult,
    OptimizerConfig,
    SliceDirection,
    TargetDensity,
    estimate_gradient,
    filter_subset,
    folded_support,
    optimize,
    project,
    target_projection,
    w1d,
    w1d_gradient,
)
from .synth import (
    CandidateBank,
    TestScene,
    aposteriori_vertical,
    builtin_scenes,
    get_scene,
    payload_mean_quadrature,
    random_candidate_bank,
    reference_sequence,
    render_with_tile,
)
from .tile import (
    CellIndex,
    SampleTile,
    init_random,
    read_tile,
    samples_in_cell,
    tile_bytes,
    write_tile,
)

__all__ = [
    "__version__",
    # errors
    "StbnError", "InvalidParameterError", "InvalidInputError", "EmptySubsetError",
    "TileFormatError", "MagicMismatchError", "UnsupportedVersionError",
    "TruncatedPayloadError", "TableParseError", "TableValidationError", "ConfigError",
    # kernels
    "SpatialKernel", "TaaKernel", "TemporalPerceptKernel", "SpatioTemporalKernel",
    "make_spatial_gaussian", "make_taa_kernel", "make_temporal_percept",
    "make_temporal_gaussian", "compose", "convolve_sequence",
    "load_kernel_table", "write_kernel_table",
    # sequences
    "FrameSequence", "ErrorSequence", "SpectrumImage",
    # tiles
    "CellIndex", "SampleTile", "init_random", "samples_in_cell",
    "read_tile", "write_tile", "tile_bytes",
    # optimizer
    "SliceDirection", "TargetDensity", "OptimizerConfig", "FilteredSubset",
    "GradientEstimate", "OptimizeResult", "folded_support", "filter_subset",
    "project", "target_projection", "w1d", "w1d_gradient",
    "estimate_gradient", "optimize",
    # perceptual metric
    "apply_taa", "filter_sequence", "error_sequence", "prelmse",
    "dft_power", "lowfreq_energy_ratio",
    # synthetic scenes
    "TestScene", "builtin_scenes", "get_scene", "render_with_tile",
    "reference_sequence", "payload_mean_quadrature",
    "CandidateBank", "random_candidate_bank", "aposteriori_vertical",
]
