"""Domain-decomposition preconditioners for operators with fractional interface perturbations."""
__version__ = "0.1.0"
