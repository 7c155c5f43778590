"""
Distances and the neighborhood graph
====================================

Houses are linked when they lie within ``epsilon`` miles of each other, and
each link is weighted by a Gaussian of the ellipsoidal distance.
"""

import numpy as np

from geowalk import GeoPoint, KernelConfig, build_graph, similarity, vincenty_distance

###############################################################################
# One degree of longitude on the equator is a little over 69 miles on the
# WGS-84 ellipsoid.

print(vincenty_distance(GeoPoint(0, 0), GeoPoint(0, 1)))

###############################################################################
# With ``sigma = 0.5`` the weight drops fast: half a mile keeps about 0.61,
# a mile and a half only about 0.01.

cfg = KernelConfig(sigma=0.5, epsilon=5.0)
for d in (0.0, 0.5, 1.0, 1.5, 3.0):
    print(f"{d:4.1f} mi -> {similarity(d, cfg):.4f}")

###############################################################################
# A few hundred random houses in an 8-mile square.  The graph is stored in
# compressed-row form and is symmetric.

r = np.random.default_rng(0)
xy = r.uniform(0, 8, size=(300, 2))
pts = np.column_stack([43.16 + xy[:, 1] / 69.05, -77.61 + xy[:, 0] / 50.3])
g = build_graph(pts, cfg)
print(g.summary()["node_count"], "nodes,", g.edge_count, "edges")
print("mean degree", g.degree.mean().round(1))

nb, w = g.neighbors(0)
print("house 0 has", len(nb), "neighbors; strongest weights", np.sort(w)[::-1][:3].round(3))
