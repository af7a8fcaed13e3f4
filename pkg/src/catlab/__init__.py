"""Training and evaluation workbench for debiased adaptive testing."""

__version__ = "0.1.0"
