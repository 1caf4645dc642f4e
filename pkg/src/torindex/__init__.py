"""Numerical verification of gerbe, twisted-bundle and family-index
identities on flat torus fibrations."""

__version__ = "0.1.0"
