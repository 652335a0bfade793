"""Reverse-mode autodiff and the layer set used by the reconstruction network."""
from . import functional
from .gradcheck import grad_check
from .layers import (AttentionConfig, AttentionSpatial, AttentionTemporal, ConvDown,
                     ConvPointwise, ConvSpatial, ConvUp, GroupNorm, Module, ParamStore,
                     ResnetBlock, SelfAttention, parameter)
from .tensor import Tensor, concat

__all__ = [
    "functional", "grad_check", "AttentionConfig", "AttentionSpatial", "AttentionTemporal",
    "ConvDown", "ConvPointwise", "ConvSpatial", "ConvUp", "GroupNorm", "Module", "ParamStore",
    "ResnetBlock", "SelfAttention", "parameter", "Tensor", "concat",
]
