"""Streaming anomaly detection for distribution-grid synchrophasor data.

Building blocks: phasor extraction from point-on-wave samples (dsp),
three-phase network modeling (grid, feeders), subspace-residual anomaly
metrics (metrics), two-sided CUSUM change detection (cusum), a
quasi-static feeder simulator (sim) and the file/CLI plumbing
(storage, pipeline, report, cli).
"""

from .cusum import ChangeEvent, CusumConfig, CusumDetector, Episode, calibrate, group_episodes
from .dsp import (FilterSpec, WaveformSegment, design_pclass_filter,
                  estimate_frequency_drift, extract_phasor_stream, unwrap_angles)
from .grid import (Bus, GridTopology, LineModel, PhaseImpedanceSpec, SystemMatrices,
                   assemble_system, build_line_model, kron_reduce,
                   smallest_left_singular_direction)
from .metrics import (DoublePmuMetric, MultiPmuMetric, SinglePmuMetric,
                      double_pmu_metric, single_pmu_metric, subspace_residual)
from .sim import (DriftProfile, FeederSimulator, LoadProfile, ScenarioResult,
                  SimulationConfig, synthesize_waveform)

__version__ = "0.1.0"

__all__ = [
    "ChangeEvent", "CusumConfig", "CusumDetector", "Episode", "calibrate",
    "group_episodes", "FilterSpec", "WaveformSegment", "design_pclass_filter",
    "estimate_frequency_drift", "extract_phasor_stream", "unwrap_angles",
    "Bus", "GridTopology", "LineModel", "PhaseImpedanceSpec", "SystemMatrices",
    "assemble_system", "build_line_model", "kron_reduce",
    "smallest_left_singular_direction", "DoublePmuMetric", "MultiPmuMetric",
    "SinglePmuMetric", "double_pmu_metric", "single_pmu_metric",
    "subspace_residual", "DriftProfile", "FeederSimulator", "LoadProfile",
    "ScenarioResult", "SimulationConfig", "synthesize_waveform",
]
