"""Feed-forward multi-texture synthesis.

One generator network learns a bank of exemplar textures; a one-hot
selection vector picks which texture to emit, and interpolating that
vector morphs smoothly between learned textures.  Training combines a
mean-centered Gram texture loss with an explicit diversity term and
introduces textures incrementally.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, NonFiniteError, ShapeError

__all__ = ["Tensor", "NonFiniteError", "ShapeError", "__version__"]
