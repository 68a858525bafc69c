from .attention import CrossAttentionLayer, FeedForward, MultiHeadAttention, TransformerBlock, scaled_dot_product
from .gradcheck import GradCheckReport, grad_check
from .losses import coordinate_mse, weighted_cross_entropy
from .mlp import Mlp2
from .optim import AdamW
from .rope import rope_rotate
from .serialize import load_arrays, save_arrays

__all__ = [
    "AdamW",
    "CrossAttentionLayer",
    "FeedForward",
    "GradCheckReport",
    "Mlp2",
    "MultiHeadAttention",
    "TransformerBlock",
    "coordinate_mse",
    "grad_check",
    "load_arrays",
    "rope_rotate",
    "save_arrays",
    "scaled_dot_product",
    "weighted_cross_entropy",
]
