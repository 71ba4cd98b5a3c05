"""Tensor-network simulation of the critical transverse-field Ising chain under X + ZZ decoherence."""

__version__ = "0.1.0"
