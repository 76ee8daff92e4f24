"""Battery/ultracapacitor hybrid energy storage module simulator."""

__version__ = "0.1.0"

from . import config, control, fuzzy, kernels, plant, sim  # noqa: F401
