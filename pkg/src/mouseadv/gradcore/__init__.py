"""Small numpy differentiable core: GRU, conv1d, dense, losses, Adam."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint
from .gradcheck import grad_check, numeric_grad, relative_error
from .layers import (
    ConvParams,
    DenseParams,
    GruCellParams,
    Param,
    activation_backward,
    activation_forward,
    conv1d_backward,
    conv1d_forward,
    conv1d_output_length,
    dense_backward,
    dense_forward,
    elu,
    gru_backward,
    gru_cell_backward,
    gru_cell_step,
    gru_final_states,
    gru_forward,
    gru_layer_backward,
    gru_layer_forward,
    relu,
    sigmoid,
)
from .losses import BCE, CE2, HINGE, MSE, loss_eval
from .optim import AdamState, NonFiniteGradientError, adam_step, clip_grad_norm, zero_grads

__all__ = [name for name in dir() if not name.startswith("_")]
