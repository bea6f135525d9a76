"""Toy-scale networks, losses and the four training stages (see ``toynet.train``)."""
from .checkpoint import load, save
from .net import ToyNet, forward, grad_check

__all__ = ["ToyNet", "forward", "grad_check", "load", "save"]
