"""Safety-index labelling, feature analysis and from-scratch classifiers for bus alert data."""

__version__ = "0.1.0"
