"""Small numpy training engine: dense/LSTM layers, peak-biased loss, Adam."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import LayerSpec, ModelParams, Trace, backward, forward, init_params
from .loss import peak_biased_grad, peak_biased_loss, peak_biased_terms
from .optim import AdamConfig, AdamState, adam_step
from .training import (History, TrainConfig, ensemble_average, fit, fit_ensemble,
                       predict, train, windows_to_xy)

__all__ = [
    "AdamConfig", "AdamState", "History", "LayerSpec", "ModelParams", "TrainConfig", "Trace",
    "adam_step", "backward", "ensemble_average", "fit", "fit_ensemble", "forward",
    "init_params", "load_checkpoint", "save_checkpoint", "peak_biased_grad", "peak_biased_loss", "peak_biased_terms", "predict",
    "train", "windows_to_xy",
]
