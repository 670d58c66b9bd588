"""ECG rhythm classification with class activation maps and learned deletion masks."""

__version__ = "0.1.0"
