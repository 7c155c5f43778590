"""Synthetic cities with known price structure.

A house's price is the sum of a base price, its neighborhood's offset, a
feature-driven term and noise::

    clean = base * (1 + offset[cluster] + rho_f * feature_amp * (w . f))
    price = clean + noise,   noise ~ N(0, (noise_std * clean)^2)

Feature vectors are ``f = z + style_strength * s[cluster]`` where ``z`` is
house-specific.  ``w`` lives in the first half of the feature dimensions and
the neighborhood style ``s`` in the second half, so the feature-driven term
is recovered exactly by ``w`` while the style carries (noisy) information
about the neighborhood that only shows up when neighbors are seen together.
"""

from dataclasses import asdict, dataclass
import json
import math
import os

import numpy as np

from . import rng
from .errors import InvalidInput
from .features import House, save_dataset
from .geo_graph import GeoPoint

MILES_PER_DEG_LAT = 69.05


@dataclass(frozen=True)
class SynthConfig:
    n_houses: int = 1500
    n_clusters: int = 10
    box_miles: float = 10.0
    cluster_sigma: float = 0.4
    base_price: float = 100.0
    offset_range: float = 0.3
    feature_dim: int = 16
    rho_f: float = 0.5
    noise_std: float = 0.05
    feature_amp: float = 0.3
    style_strength: float = 0.5
    origin_lat: float = 43.16
    origin_lon: float = -77.61
    seed: int = 0

    def __post_init__(self):
        if self.n_houses < 1 or self.n_clusters < 1 or self.feature_dim < 2:
            raise InvalidInput("n_houses, n_clusters >= 1 and feature_dim >= 2 required")
        for name in ("box_miles", "cluster_sigma", "base_price"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be > 0")
        for name in ("offset_range", "noise_std", "feature_amp", "style_strength"):
            if not getattr(self, name) >= 0:
                raise InvalidInput(f"{name} must be >= 0")
        if not 0.0 <= self.rho_f <= 1.0:
            raise InvalidInput("rho_f must lie in [0, 1]")


def _clean_prices(truth, features):
    base = truth["base_price"]
    w = np.asarray(truth["w"], dtype=np.float64)
    offsets = np.asarray(truth["offsets"], dtype=np.float64)[np.asarray(truth["cluster"])]
    return base * (1.0 + offsets + truth["rho_f"] * truth["feature_amp"] * (features @ w))


def regenerate_prices(truth, features):
    """Rebuild prices from the ground truth record and the stored features."""
    clean = _clean_prices(truth, np.asarray(features, dtype=np.float64))
    price = clean + np.asarray(truth["noise"], dtype=np.float64)
    return np.maximum(price, truth["price_floor"])


def generate(cfg=SynthConfig()):
    """Returns ``(houses, truth)``; ``truth`` is JSON-serialisable."""
    gen = rng.generator(cfg.seed, rng.SYNTH)
    n, k, D = cfg.n_houses, cfg.n_clusters, cfg.feature_dim
    half = D // 2

    centers = gen.uniform(0.0, cfg.box_miles, size=(k, 2))
    cluster = gen.integers(0, k, size=n)
    xy = centers[cluster] + gen.normal(0.0, cfg.cluster_sigma, size=(n, 2))
    lat = cfg.origin_lat + xy[:, 1] / MILES_PER_DEG_LAT
    lon = cfg.origin_lon + xy[:, 0] / (MILES_PER_DEG_LAT * math.cos(math.radians(cfg.origin_lat)))

    offsets = gen.uniform(-cfg.offset_range, cfg.offset_range, size=k)
    style = np.zeros((k, D))
    style[:, half:] = gen.normal(size=(k, D - half))
    w = np.zeros(D)
    w[:half] = gen.normal(size=half)
    w /= np.linalg.norm(w)

    z = gen.normal(size=(n, D))
    # stored features are float32, so derive prices from the rounded values
    features = (z + cfg.style_strength * style[cluster]).astype(np.float32).astype(np.float64)

    truth = {
        "config": asdict(cfg),
        "base_price": cfg.base_price,
        "rho_f": cfg.rho_f,
        "feature_amp": cfg.feature_amp,
        "price_floor": 0.05 * cfg.base_price,
        "centers_miles": centers.tolist(),
        "cluster": cluster.tolist(),
        "offsets": offsets.tolist(),
        "style": style.tolist(),
        "w": w.tolist(),
    }
    clean = _clean_prices(truth, features)
    noise = gen.normal(size=n) * cfg.noise_std * np.abs(clean)
    truth["noise"] = noise.tolist()
    price = regenerate_prices(truth, features)

    width = len(str(n - 1))
    houses = [House(f"h{i:0{width}d}", GeoPoint(float(lat[i]), float(lon[i])), float(price[i]), features[i])
              for i in range(n)]
    return houses, truth


def write_city(out_dir, houses, truth):
    """Write ``houses.csv``, ``features.bin`` and ``truth.json`` into ``out_dir``."""
    save_dataset(out_dir, houses)
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump(truth, fh)
