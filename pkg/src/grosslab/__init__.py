"""Lattice laboratory for the Froehlich polaron Hamiltonian."""
__version__ = "0.1.0"
