"""Hierarchical neural surrogate of generalized Voronoi diagrams.

Sites (points, segments, ellipses, boxes) are clustered into a k-means
tree; each node holds a small MLP trained to pick the child (or site) whose
distance function is lowest. Routing down the tree approximates the lower
envelope of all site distances.
"""

__version__ = "0.1.0"
