"""Adversarial shared/private multi-task relation extraction.

Bi-GRU encoders with multi-aspect self-attention, a gradient-reversed task
discriminator, the training loop, and macro-averaged evaluation, on a small
float64 autodiff core. The GRU recurrence runs in a compiled kernel when
available (see :mod:`admtl._kernels`).
"""
from ._kernels import BACKEND as GRU_BACKEND
from .model import ModelConfig, MtlModel, forward_task, predict
from .text import RelationExample, TaskSpec, Vocabulary
from .trainer import TrainConfig, fit

__all__ = ["GRU_BACKEND", "ModelConfig", "MtlModel", "RelationExample", "TaskSpec", "TrainConfig",
           "Vocabulary", "fit", "forward_task", "predict"]
__version__ = "0.1.0"
