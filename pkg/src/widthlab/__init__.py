"""Wide mean-field variational BNNs versus their NNGP limit."""

__version__ = "0.1.0"
