"""Polar lattice codes for the Gaussian wiretap channel."""

from .lattice import PartitionChain
from .channel import BmsChannel, AsymPair
from .construction import CodeConfig, Code, assemble_code

__all__ = ["PartitionChain", "BmsChannel", "AsymPair", "CodeConfig", "Code",
           "assemble_code"]
__version__ = "0.1.0"
