"""Convolutional bidirectional-GRU relation classifier for clinical text,
with exact manual backpropagation and a full evaluation stack."""

__version__ = "0.1.0"
