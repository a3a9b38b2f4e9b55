"""Temporal-wise attention spiking neural networks for event streams, in numpy."""
from .errors import ConfigurationError, DataError, ParseError, TASNNError
from .events import AggregationConfig, EventStream, aggregate
from .network import NetworkSpec, build
from .neurons import NeuronConfig
from .training import EvalConfig, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig",
    "ConfigurationError",
    "DataError",
    "EvalConfig",
    "EventStream",
    "NetworkSpec",
    "NeuronConfig",
    "ParseError",
    "TASNNError",
    "TrainConfig",
    "aggregate",
    "build",
    "evaluate",
    "train",
]
