from __future__ import annotations

from .base import LookupEnum


class ModelKind(LookupEnum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    MLP = "mlp"


class Activation(LookupEnum):
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"


class OutputHead(LookupEnum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"


class LossKind(LookupEnum):
    SQUARED = "squared"
    CROSS_ENTROPY = "cross-entropy"
