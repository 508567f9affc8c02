"""Minimal differentiable layer set, optimizer and gradient checker."""
from .functional import (  # noqa: F401
    batchnorm2d,
    conv2d,
    conv_transpose2d,
    dropout,
    global_avg_pool,
    inject_fault,
    leaky_relu,
    linear,
    max_pool2d,
    relu,
)
from .gradcheck import grad_check  # noqa: F401
from .optim import Adam, AdamState, adam_step  # noqa: F401
