from .tensor import Tensor, no_grad
from .model import (
    ModelConfig,
    MultiscaleModel,
    build_model,
    forward_features,
    init_feature_normalization,
    metric_forward,
)

__all__ = [
    "Tensor",
    "no_grad",
    "ModelConfig",
    "MultiscaleModel",
    "build_model",
    "forward_features",
    "init_feature_normalization",
    "metric_forward",
]
