"""Minimal reverse-mode autodiff core."""

from .graph import Graph, NodeRef, Tensor, evaluate, gradient, PRIMITIVES
from .optim import SGDConfig, cosine_lr, init_state, sgd_step
from .checkpoint import save_checkpoint, load_checkpoint
from .gradcheck import finite_difference, max_rel_err, check_graph
from . import ops

__all__ = [
    "Graph",
    "NodeRef",
    "Tensor",
    "evaluate",
    "gradient",
    "PRIMITIVES",
    "SGDConfig",
    "cosine_lr",
    "init_state",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
    "finite_difference",
    "max_rel_err",
    "check_graph",
    "ops",
]
