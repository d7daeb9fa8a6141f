"""Desk-scale text-guided infrared small target detection.

Subpackages: tensor/gradcheck (autodiff core), prompts (text side), blocks
and network (the model), metrics, data (datasets + synthetic generator),
train (loss/optimizer/loop/ablations), cli.
"""

from .tensor import (Tensor, Graph, ShapeError, NumericsError, TxirError,
                     float64_mode, no_grad, backward)
from .prompts import PromptSpec, TextEmbedding, render_prompt, parse_prompt, toy_embed
from .network import ModelConfig, ModelParams, init_model, model_forward
from .train import TrainConfig, soft_iou_loss

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Graph", "ShapeError", "NumericsError", "TxirError",
    "float64_mode", "no_grad", "backward",
    "PromptSpec", "TextEmbedding", "render_prompt", "parse_prompt", "toy_embed",
    "ModelConfig", "ModelParams", "init_model", "model_forward",
    "TrainConfig", "soft_iou_loss",
    "__version__",
]
