# Deep kernel machines for graph node classification
__version__ = "0.1.0"
