"""Wind-forced spatiotemporal transformer ocean-wave forecasting, desk scale."""

__version__ = "0.1.0"
