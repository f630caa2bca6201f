"""Object graph matching across two views with epipolar guidance and change detection."""

from .errors import ConfigError, EpimatchError, FormatError, NoImprovement
from .evaluation import BenchConfig, run_benchmark
from .learn import TrainedModel, classify_change, fit_lambda
from .scenegen import PairConfig, ScenePair, ViewpointProtocol, generate_pair, pair_seed
from .serialization import load_model, load_pair, save_model, save_pair
from .solver import METHODS, MatchOptions, match_pair, score_pair

__version__ = "0.1.0"

__all__ = [
    "BenchConfig", "ConfigError", "EpimatchError", "FormatError", "METHODS", "MatchOptions",
    "NoImprovement", "PairConfig", "ScenePair", "TrainedModel", "ViewpointProtocol",
    "classify_change", "fit_lambda", "generate_pair", "load_model", "load_pair", "match_pair",
    "pair_seed", "run_benchmark", "save_model", "save_pair", "score_pair",
]
