"""Attack and defense toolkit for perturbation-based tabular explainers."""

__version__ = "0.1.0"
