"""Simulation toolkit for principal component regression under spectral decay."""

from .datagen import DesignSample, GroundTruth, make_ground_truth, rng_for, sample_design
from .estimators import PcaDecomposition, oracle_fit, pca, pcr_fit
from .harness import StudyConfig, calibrate_ratio_ceiling, mc_study, oracle_comparison, rate_study
from .spectrum import Spectrum, build_grouping, evepd_sweep, gap_report, make_spectrum

__version__ = "0.1.0"

__all__ = [
    "DesignSample",
    "GroundTruth",
    "PcaDecomposition",
    "Spectrum",
    "StudyConfig",
    "build_grouping",
    "calibrate_ratio_ceiling",
    "evepd_sweep",
    "gap_report",
    "make_ground_truth",
    "make_spectrum",
    "mc_study",
    "oracle_comparison",
    "oracle_fit",
    "pca",
    "pcr_fit",
    "rate_study",
    "rng_for",
    "sample_design",
]
