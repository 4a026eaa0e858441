"""Density-matrix simulation of entanglement transfer through noisy channels.

A hyperentangled photon-pair source feeds two noisy polarization channels;
an unbalanced interferometer pair then maps the surviving energy-time
entanglement back onto polarization. The package models the full pipeline
as exact 4-qubit density-matrix evolution plus simulated pair counting,
state reconstruction, and entanglement metrics.
"""

__version__ = "0.1.0"

from .qcore import (
    DensityMatrix,
    PhotonPairState,
    PostselectionError,
    QuantumChannel,
    SubsystemLayout,
    PAIR_LAYOUT,
    PHI_PLUS_KET,
    apply_channel,
    apply_unitary,
    concurrence,
    fidelity_to,
    partial_trace,
    purity,
    random_state,
    tensor,
    trace_distance,
)
from .optics import (
    CoherentStage,
    NoisyChannelSpec,
    RotatingPlateStage,
    SourceConfig,
    WaveplateSpec,
    apply_noisy_channel,
    hyperentangled_input,
    jones,
    make_source_state,
    rotating_plate_channel,
)
from .transfer import (
    InterferometerConfig,
    TransferOutcome,
    block_long_arms,
    fringe_visibility,
    sum_phase_scan,
    transfer,
)
from .tomo import (
    ChshAngles,
    CountData,
    DEFAULT_CHSH_ANGLES,
    MeasurementSetting,
    MetricsReport,
    PartySetting,
    ReconstructionResult,
    analytic_counts,
    chsh_value,
    counts_from_csv,
    counts_to_csv,
    expected_probabilities,
    linear_inversion,
    mle_reconstruct,
    monte_carlo_metrics,
    simulate_counts,
    standard_settings,
)
from .cli import (
    ConfigError,
    ExperimentConfig,
    RunReport,
    SweepConfig,
    TomographyConfig,
    default_config,
    load_config,
    run_chsh_sweep,
    run_custom,
    run_fringe_scan,
    run_purification,
    validate,
)

__all__ = [
    "__version__",
    # qcore
    "DensityMatrix", "PhotonPairState", "PostselectionError", "QuantumChannel",
    "SubsystemLayout", "PAIR_LAYOUT", "PHI_PLUS_KET", "apply_channel",
    "apply_unitary", "concurrence", "fidelity_to", "partial_trace", "purity",
    "random_state", "tensor", "trace_distance",
    # optics
    "CoherentStage", "NoisyChannelSpec", "RotatingPlateStage", "SourceConfig",
    "WaveplateSpec", "apply_noisy_channel", "hyperentangled_input", "jones",
    "make_source_state", "rotating_plate_channel",
    # transfer
    "InterferometerConfig", "TransferOutcome", "block_long_arms",
    "fringe_visibility", "sum_phase_scan", "transfer",
    # tomo
    "ChshAngles", "CountData", "DEFAULT_CHSH_ANGLES", "MeasurementSetting",
    "MetricsReport", "PartySetting", "ReconstructionResult", "analytic_counts",
    "chsh_value", "counts_from_csv", "counts_to_csv", "expected_probabilities",
    "linear_inversion", "mle_reconstruct", "monte_carlo_metrics",
    "simulate_counts", "standard_settings",
    # cli
    "ConfigError", "ExperimentConfig", "RunReport", "SweepConfig",
    "TomographyConfig", "default_config", "load_config", "run_chsh_sweep",
    "run_custom", "run_fringe_scan", "run_purification", "validate",
]
