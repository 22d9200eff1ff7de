"""Interaction-aware vehicle trajectory prediction.

Vehicles and the local road map form a directed heterogeneous graph;
per-vehicle motion histories are encoded by a recurrent net, the map
raster by a convolutional net, the interaction by a two-layer graph
net, and a recurrent decoder emits the target vehicle's future path.
"""

__version__ = "0.1.0"
