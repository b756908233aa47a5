"""Off-graph startup-success prediction over a temporal investor-company network."""

__version__ = "0.1.0"
