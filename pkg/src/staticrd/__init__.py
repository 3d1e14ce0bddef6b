"""Static reuse-distance histograms and cache hit rates for array loop nests."""

__version__ = "0.1.0"
