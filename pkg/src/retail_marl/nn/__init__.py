from .autodiff import NonFiniteError, Tensor, concat, log_softmax, minimum, segment_sum
from .layers import (CategoricalSample, GatLayer, Linear, MlpEncoder, Module, Parameter, categorical_head, gradients,
                     categorical_log_prob_entropy, gat_forward, mlp_forward)
from .optim import Adam, Sgd, clip_grad_norm, sgd_step

__all__ = [
    "NonFiniteError", "Tensor", "concat", "log_softmax", "minimum", "segment_sum",
    "CategoricalSample", "GatLayer", "Linear", "MlpEncoder", "Module", "Parameter", "categorical_head",
    "categorical_log_prob_entropy", "gradients", "gat_forward", "mlp_forward", "Adam", "Sgd", "clip_grad_norm", "sgd_step",
]
