"""Origin-destination flow modelling at a coarse zoning and downscaling to a fine one."""

__version__ = "0.1.0"
