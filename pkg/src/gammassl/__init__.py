"""Masked gamma-SSL: learning per-pixel uncertainty by masked-consistency training."""

from .datagen import IGNORE, DomainSpec, LabeledSample, generate_domain, shift_distance
from .gamma_train import (
    compute_gamma,
    confidence_mask,
    hard_consistency_mask,
    masked_consistency_loss,
    run_uncertainty_training,
    sharpen,
    supervised_loss,
    train_task,
)
from .metrics import aupr, evaluate_model, f_beta, max_f_beta_with_pac, pr_curve
from .nnet import ModelConfig, SegNet, SegOutput

__version__ = "0.1.0"
