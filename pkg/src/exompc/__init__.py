"""Multi-stage robust NMPC workbench for a lower-limb exoskeleton."""

__version__ = "0.1.0"
