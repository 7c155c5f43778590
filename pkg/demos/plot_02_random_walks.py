"""
Random walks and test sequences
===============================

Training sequences are weighted random walks on the graph.  Each held-out
house gets its own walks that contain it exactly once.
"""

import numpy as np

from geowalk import SimilarityGraph, WalkConfig, random_walks, test_sequences
from geowalk.walks import TransitionTable

###############################################################################
# A star with edge weights 1, 1 and 2: from the center the heavy leaf is
# picked half of the time.

star = SimilarityGraph.from_edges(4, [0, 0, 0], [1, 2, 3], [1.0, 1.0, 2.0])
print(TransitionTable(star).probabilities(0))

###############################################################################
# Walks are a pure function of (seed, walk index), so asking for more walks
# only appends rows.

ring = SimilarityGraph.from_edges(6, [0, 1, 2, 3, 4, 0], [1, 2, 3, 4, 5, 5], np.ones(6))
for s in random_walks(ring, WalkConfig(length=6, num_sequences=3, seed=1)):
    print(s.node_ids)

###############################################################################
# Add a held-out node 6 hanging off nodes 0 and 3.  Every test sequence has it
# once, at a random position.

ext = SimilarityGraph.from_edges(7, [0, 1, 2, 3, 4, 0, 0, 3], [1, 2, 3, 4, 5, 5, 6, 6],
                                 np.ones(8), train_count=6)
for s in test_sequences(ext, 6, 4, WalkConfig(length=5, seed=2)):
    print(s.node_ids, "test at", s.test_position)
