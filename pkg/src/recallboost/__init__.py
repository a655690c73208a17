"""Boosted-tree breast cancer classification tuned for recall, with SHAP explanations."""

__version__ = "0.1.0"
