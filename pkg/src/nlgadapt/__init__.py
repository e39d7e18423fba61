"""SC-LSTM language generation with multi-domain adaptation."""

__version__ = "0.1.0"
