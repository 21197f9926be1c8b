"""Visitor-weighted POI-cell walkability networks.

Builds a bipartite network between points of interest and mobile-visitor
grid cells, weights edges by visitor volume and walking distance, detects
walkability communities, and produces POI-level and temporal reports.
"""

__version__ = "0.1.0"
