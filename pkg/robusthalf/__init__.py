"""Oracle-based robust learning of halfspaces."""

from .core import Dataset, Halfspace, LabeledExample, NormSpec
from .errors import RobustHalfError

__version__ = "1.0.0"

__all__ = ["Dataset", "Halfspace", "LabeledExample", "NormSpec", "RobustHalfError", "__version__"]
