"""RNS-CKKS kernel engine feeding a block-level GPU performance model."""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
