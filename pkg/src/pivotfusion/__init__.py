"""Soil-moisture map construction for centre-pivot fields: a cylindrical
Richards field model fused with pivot-mounted sensor readings by an EKF."""

__version__ = "0.1.0"
