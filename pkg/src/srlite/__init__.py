"""Lightweight Swin-transformer super-resolution networks on a numpy autodiff core."""
__version__ = "0.1.0"
