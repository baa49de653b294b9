"""Flow-guided mask propagation for multi-instance video object segmentation."""

from maskprop.core import BBox

__version__ = "0.1.0"

__all__ = ["BBox", "__version__"]
