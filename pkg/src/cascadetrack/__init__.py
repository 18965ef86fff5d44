"""Early-stopping visual tracking over a cascade of correlation-filter and convolutional layers."""
from .geometry import Action, BoundingBox, apply_action, iou, translate
from .config import CascadeConfig

__version__ = "0.1.0"

__all__ = ["Action", "BoundingBox", "CascadeConfig", "apply_action", "iou", "translate", "__version__"]
