"""1-Lipschitz MLPs trained with exact numpy gradients."""
import numpy as np

from .attack import random_ball_attack
from .layers import DenseLayer, aol_effective_weight, aol_scaling, init_weight, maxmin
from .losses import LossSpec, loss_and_grad, loss_value
from .network import (Network, backward, forward, input_gradient, load_checkpoint, make_mlp,
                      save_checkpoint)
from .training import (DEFAULT_EPSILON, LR_GRID, NesterovSGD, TrainConfig, TrainingDiverged,
                       accuracy, cra, evaluate, margins, one_cycle_lr, select_learning_rate, train)


def cpl_forward(x, W, b, power_state=None, training=False):
    """Single CPL residual map applied to one vector or a batch of rows.

    ``power_state`` is the persistent power-iteration vector; it is updated
    in place when training.
    """
    layer = DenseLayer("cpl", W, b, None, power_state)
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = layer.forward(X, training=training)
    if power_state is not None and training:
        power_state[...] = layer.power_vector
    return z[0] if np.ndim(x) == 1 else z


__all__ = [
    "DenseLayer", "Network", "LossSpec", "TrainConfig", "TrainingDiverged", "NesterovSGD",
    "maxmin", "aol_scaling", "aol_effective_weight", "cpl_forward", "init_weight",
    "forward", "backward", "input_gradient", "make_mlp", "loss_value", "loss_and_grad",
    "train", "evaluate", "cra", "accuracy", "margins", "one_cycle_lr", "select_learning_rate",
    "random_ball_attack", "save_checkpoint", "load_checkpoint", "DEFAULT_EPSILON", "LR_GRID",
]
