"""Gene panel selection by reinforced iterative agents over a meta-voted pre-filter."""

__version__ = "0.1.0"
