"""APSK constellations and two-stage detection for fiber channels with nonlinear phase noise."""

__version__ = "0.1.0"

from .analytic import (ExactHarmonics, HarmonicsBank, PhaseHarmonics, bessel_i0,
                       estimate_harmonics, marcum_q1, pdf_y, pdf_y_tilde, rice_pdf)
from .channel import ChannelParams, mean_nlpn, noise_variance, sample_channel
from .constellation import (ApskSpec, build_apsk, enumerate_partitions, rescale_power,
                            uniform_radii)
from .detection import (MLDetector, ThresholdSet, TwoStageDetector, map_thresholds, ml_detect,
                        ts_detect)
from .labeling import (Labeling, brgc, direct_product, exhaustive_labeling_search,
                       gray_rectangular, proposed_phase_offsets)
from .metrics import (QuadratureConfig, TransitionMatrix, bep, first_stage_error, qam16, sep,
                      sep_ts, transition_matrix_mc, transition_matrix_ts)
from .optimize import (NelderMeadConfig, OptimizationResult, joint_optimize, optimize_partition,
                       optimize_radii, power_sweep)
from .units import dbm_to_watt, watt_to_dbm

__all__ = [
    "ApskSpec", "ChannelParams", "ExactHarmonics", "HarmonicsBank", "Labeling", "MLDetector",
    "NelderMeadConfig", "OptimizationResult", "PhaseHarmonics", "QuadratureConfig",
    "ThresholdSet", "TransitionMatrix", "TwoStageDetector", "bep", "bessel_i0", "brgc",
    "build_apsk", "dbm_to_watt", "direct_product", "enumerate_partitions", "estimate_harmonics",
    "exhaustive_labeling_search", "first_stage_error", "gray_rectangular", "joint_optimize",
    "map_thresholds", "marcum_q1", "mean_nlpn", "ml_detect", "noise_variance",
    "optimize_partition", "optimize_radii", "pdf_y", "pdf_y_tilde", "power_sweep",
    "proposed_phase_offsets", "qam16", "rescale_power", "rice_pdf", "sample_channel", "sep",
    "sep_ts", "transition_matrix_mc", "transition_matrix_ts", "ts_detect", "uniform_radii",
    "watt_to_dbm",
]
