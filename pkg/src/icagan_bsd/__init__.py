"""Bad-sequence detection in correlated sensor streams: an ICA-GAN maps
measurement windows to approximately i.i.d. uniform components, which are then
checked with exact occupancy (coincidence) uniformity tests."""

from .baselines import OneClassSVM
from .exceptions import ConvergenceError, DataError, NotFittedError, NumericalError, ShapeError
from .gan import IcaGan, TrainConfig
from .occupancy import CoincidenceTest
from .pipeline import BadSequenceDetector
from .preprocess import EmpiricalCdfTransformer, LinearPredictionWhitener

__version__ = "0.1.0"

__all__ = [
    "BadSequenceDetector",
    "CoincidenceTest",
    "ConvergenceError",
    "DataError",
    "EmpiricalCdfTransformer",
    "IcaGan",
    "LinearPredictionWhitener",
    "NotFittedError",
    "NumericalError",
    "OneClassSVM",
    "ShapeError",
    "TrainConfig",
]
