"""Graph-to-sequence price regression.

Geo-located houses are linked into an epsilon-neighborhood graph with
Gaussian edge weights, random walks over the graph become sequences, and a
two-layer bidirectional LSTM maps the sequence of feature vectors to prices.
"""

__version__ = "0.1.0"

from .errors import (GeowalkError, InvalidInput, LeakageError, NoWalkableNode,  # noqa: E402
                     NumericalFailure, StoreError, VincentyNonConvergence)
from .geo_graph import (GeoPoint, KernelConfig, KernelForm, SimilarityGraph,  # noqa: E402
                        attach_test_nodes, build_graph, similarity, vincenty_distance)
from .walks import WalkConfig, WalkSequence, random_walks, test_sequences  # noqa: E402
from .features import House, normalize, pool_house_features, load_dataset  # noqa: E402
from .net import (BlstmModel, RmsPropState, backward, blstm_forward, init_model,  # noqa: E402
                  loss, lstm_step, rmsprop_step)
from .lasso import lasso_fit  # noqa: E402
from .pipeline import (Metrics, PredictionSummary, TrainConfig, confidence_groups,  # noqa: E402
                       evaluate, predict, split, train)
from .synth import SynthConfig, generate  # noqa: E402
