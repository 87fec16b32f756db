"""hieropf package: hierarchical ADMM for AC optimal power flow."""

__version__ = "0.1.0"
