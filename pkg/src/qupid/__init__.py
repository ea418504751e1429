"""Second-order propagation of parameter uncertainty through quantum dynamics."""

__version__ = "0.1.0"
