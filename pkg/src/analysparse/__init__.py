"""Learning analysis-sparsity dictionaries by differentiating through an
unrolled dual solver."""

from .baseline import SmoothedConfig, denoise_smoothed, smoothed_l1, train_smoothed
from .datagen import DataConfig, Dataset, add_noise, gen_dataset, gen_signal, load, make_dtv, save
from .denoiser import DenoiseConfig, DenoiseResult, denoise, denoise_recorded, fista_dual, primal_from_dual, step_size
from .estimators import AnalysisDictionaryLearner, DualFistaDenoiser, SmoothedL1DictionaryLearner
from .learner import (MatchReport, TrainConfig, TrainReport, batch_mse,
                      center_columns, grid_search_lambda, match_columns,
                      rescale_unit, sort_columns, train)
from .linalg import Rng, gaussian, linf_norm, matmul, spectral_norm_sq

__all__ = [
    "AnalysisDictionaryLearner",
    "DataConfig",
    "Dataset",
    "DenoiseConfig",
    "DenoiseResult",
    "DualFistaDenoiser",
    "MatchReport",
    "Rng",
    "SmoothedConfig",
    "SmoothedL1DictionaryLearner",
    "TrainConfig",
    "TrainReport",
    "add_noise",
    "batch_mse",
    "center_columns",
    "denoise",
    "denoise_recorded",
    "denoise_smoothed",
    "fista_dual",
    "gaussian",
    "gen_dataset",
    "gen_signal",
    "grid_search_lambda",
    "linf_norm",
    "load",
    "make_dtv",
    "match_columns",
    "matmul",
    "primal_from_dual",
    "rescale_unit",
    "save",
    "smoothed_l1",
    "sort_columns",
    "spectral_norm_sq",
    "step_size",
    "train",
    "train_smoothed",
]

__version__ = "0.1.0"
