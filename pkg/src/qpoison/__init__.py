"""Simulation and analysis toolkit for phonon-mediated quasiparticle poisoning in charge-sensitive qubits."""

__version__ = "0.1.0"
