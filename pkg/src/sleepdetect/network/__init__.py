from .layers import (
    additive_attention,
    bgru_forward,
    channel_mixing,
    conv_block,
    softmax,
)
from .model import ModelConfig, NetworkOutput, SplitStreamNet, model_init

__all__ = [
    "ModelConfig",
    "NetworkOutput",
    "SplitStreamNet",
    "additive_attention",
    "bgru_forward",
    "channel_mixing",
    "conv_block",
    "model_init",
    "softmax",
]
