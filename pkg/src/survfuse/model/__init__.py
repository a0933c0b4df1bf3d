"""The multimodal variational survival model, its losses, prediction and training."""

from .checkpoint import load_checkpoint, save_checkpoint
from .networks import ModalityConfig
from .samvae import (
    Batch,
    CifCurves,
    LatentSample,
    SamvaeModel,
    SurvivalCurves,
    cif_samples,
    encode_and_sample,
    loss_competing_risks,
    loss_single_risk,
    model_loss,
    predict_cif,
    predict_cif_curves,
    predict_survival_curve,
)
from .training import TrainConfig, TrainLog, fit_marginal_weibull, train

__all__ = [name for name in dir() if not name.startswith("_")]
