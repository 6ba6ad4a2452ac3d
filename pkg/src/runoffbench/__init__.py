"""LSTM and Transformer rainfall-runoff benchmarking on a from-scratch autodiff core."""

__version__ = "0.1.0"
