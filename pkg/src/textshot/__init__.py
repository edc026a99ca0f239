"""Text-conditioned transductive few-shot video classification, desk scale."""

__version__ = "0.1.0"
