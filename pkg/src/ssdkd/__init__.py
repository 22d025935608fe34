"""Data-free knowledge distillation with a modulated inversion objective and
a prioritized replay buffer, on a small numpy autodiff engine."""
from .autodiff import DomainError, Graph, ShapeError, Tensor, UsageError, backward, fd_check
from .config import RunConfig, default_config
from .engine import ABLATION_ROWS, ablate, distillation_phase, inversion_phase, pretrain_teacher, run
from .losses import bn_loss, kd_loss, modulating_phi, task_loss
from .nn import CheckpointError, ConfigError, NumericalError, load_checkpoint, save_checkpoint
from .replay import ReplayBuffer

__version__ = "0.1.0"

__all__ = [
    "ABLATION_ROWS", "CheckpointError", "ConfigError", "DomainError", "Graph", "NumericalError",
    "ReplayBuffer", "RunConfig", "ShapeError", "Tensor", "UsageError", "ablate", "backward",
    "bn_loss", "default_config", "distillation_phase", "fd_check", "inversion_phase", "kd_loss",
    "load_checkpoint", "modulating_phi", "pretrain_teacher", "run", "save_checkpoint", "task_loss",
]
