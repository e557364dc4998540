"""Adaptive Fourier decomposition features for AAMI heartbeat classification."""

from afd_ecg.afd import AFDDecomposition, SearchGrid, decompose, next_pole, reconstruct
from afd_ecg.analytic import analytic_signal, inner
from afd_ecg.evaluation import ConfusionMatrix, SplitSpec, confusion, metrics
from afd_ecg.features import CLASSES, FEATURE_NAMES, map_aami, segment
from afd_ecg.ifreq import instantaneous_frequency, phase_derivative, tfr
from afd_ecg.signal_io import BeatAnnotation, RawRecord, RecordFormatError, resample
from afd_ecg.svm import SVMParams, TrainedModel, train_ovo

__version__ = "0.1.0"

__all__ = [
    "AFDDecomposition", "SearchGrid", "decompose", "next_pole", "reconstruct",
    "analytic_signal", "inner",
    "ConfusionMatrix", "SplitSpec", "confusion", "metrics",
    "CLASSES", "FEATURE_NAMES", "map_aami", "segment",
    "instantaneous_frequency", "phase_derivative", "tfr",
    "BeatAnnotation", "RawRecord", "RecordFormatError", "resample",
    "SVMParams", "TrainedModel", "train_ovo",
]
