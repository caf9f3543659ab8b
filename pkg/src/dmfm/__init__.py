"""Dynamic matrix factor models estimated by EM and Kalman smoothing."""

from .em import DmfmParams, EmConfig, EmReport, run_em
from .metrics import MetricSet, col_space_distance, mse_missing, mse_signal
from .pe import PeInit, pe_init
from .series import MatrixSeries
from .simulate import DgpConfig, SimTruth, simulate

__all__ = [
    "DgpConfig",
    "DmfmParams",
    "EmConfig",
    "EmReport",
    "MatrixSeries",
    "MetricSet",
    "PeInit",
    "SimTruth",
    "col_space_distance",
    "mse_missing",
    "mse_signal",
    "pe_init",
    "run_em",
    "simulate",
]
