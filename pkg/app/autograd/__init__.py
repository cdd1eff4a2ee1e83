"""
Motore minimale di differenziazione automatica reverse-mode
Solo gli operatori necessari a refiner, discriminatore e predittore
"""

from app.autograd.tensor import OpKind, Tape, TapeNode, Tensor, backward, get_dtype, precision
from app.autograd import ops
from app.autograd.gradcheck import conv2d_reference, grad_check
from app.autograd.optim import scheduled_lr, sgd_step, zero_grad
from app.autograd.tns import decode_tns, encode_tns, read_tns, write_tns

__all__ = [
    "OpKind",
    "Tape",
    "TapeNode",
    "Tensor",
    "backward",
    "get_dtype",
    "precision",
    "ops",
    "conv2d_reference",
    "grad_check",
    "scheduled_lr",
    "sgd_step",
    "zero_grad",
    "decode_tns",
    "encode_tns",
    "read_tns",
    "write_tns",
]
