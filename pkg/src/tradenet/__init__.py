"""Trade surveillance through trading-network motifs."""

__version__ = "0.1.0"
