from .checkpoint import load_params, read_checkpoint, save_params
from .gradcheck import grad_check
from .layers import FlatActor, GraphActor, TopologyMismatch, edge_embed, edge_score, graph_conv
from .optim import Adam, bce_loss
from .tensor import Tensor, no_grad

__all__ = [
    "Adam", "FlatActor", "GraphActor", "Tensor", "TopologyMismatch", "bce_loss", "edge_embed",
    "edge_score", "grad_check", "graph_conv", "load_params", "no_grad", "read_checkpoint",
    "save_params",
]
