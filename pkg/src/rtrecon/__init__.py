"""Accelerated MRI reconstruction toolkit: masks, GRAPPA, coil compression, enhancer, metrics."""
__version__ = "0.1.0"
