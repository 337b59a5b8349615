"""Class-wise convolution poisoning, its Gaussian-mixture theory and a shortcut lab."""
__version__ = "0.1.0"
