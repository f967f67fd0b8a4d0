"""gann - modular graph-based approximate nearest-neighbor search toolkit."""

__version__ = "0.1.0"
__author__ = "gann maintainers"
__description__ = "Graph-based ANN search: seeds, diversification, builders, benchmarks"
