"""House records, feature pooling, z-scoring and the on-disk house/feature formats.

``houses.csv`` has the header ``id,lat,lon,price``.  Feature stores are
either ``features.csv`` (``id,f0,f1,...``) or the binary ``features.bin``::

    b"GWRF1"                       magic
    u32 count, u32 dim             little-endian
    count x (u32 nbytes, utf-8 id) id table
    count x dim float32            row-major, little-endian
"""

import csv
from dataclasses import dataclass, field, replace
import enum
import math
import os
import struct

import numpy as np

from .errors import InvalidInput, LeakageError, StoreError
from .geo_graph import GeoPoint

MAGIC = b"GWRF1"
DEFAULT_DIM = 1024


@dataclass(frozen=True, eq=False)
class House:
    id: str
    location: GeoPoint
    price: float
    features: np.ndarray = field(repr=False)
    # set on held-out records so training-only stages can refuse them
    tainted: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.price) and self.price > 0):
            raise InvalidInput(f"house {self.id}: price must be positive and finite, got {self.price}")
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise InvalidInput(f"house {self.id}: features must be a finite 1-D vector")
        object.__setattr__(self, "features", f)


def taint(houses):
    return [replace(h, tainted=True) for h in houses]


def check_untainted(houses, stage):
    """Raise LeakageError if any held-out record is about to be used by ``stage``."""
    bad = [h.id for h in houses if h.tainted]
    if bad:
        raise LeakageError(f"{len(bad)} held-out house(s) reached {stage}: {bad[:5]}")


def coords(houses):
    return np.array([(h.location.latitude, h.location.longitude) for h in houses], dtype=np.float64)


def prices(houses):
    return np.array([h.price for h in houses], dtype=np.float64)


def feature_matrix(houses):
    return np.vstack([h.features for h in houses])


# --------------------------------------------------------------------------
# pooling and normalisation


class Pooling(enum.Enum):
    AVERAGE = "average"
    MAX = "max"


def pool_house_features(image_features, mode=Pooling.AVERAGE):
    """Collapse the per-image vectors of one house into one vector."""
    if len(image_features) == 0:
        raise InvalidInput("no image features to pool")
    dims = {len(v) for v in image_features}
    if len(dims) != 1:
        raise InvalidInput(f"image feature vectors have mixed dimensions {sorted(dims)}")
    stack = np.asarray(image_features, dtype=np.float64)
    if Pooling(mode) is Pooling.AVERAGE:
        return stack.mean(axis=0)
    return stack.max(axis=0)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        scale = np.where(self.std > 0, self.std, 1.0)
        out = (x - self.mean) / scale
        return np.where(self.std > 0, out, 0.0)

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * np.where(self.std > 0, self.std, 1.0) + self.mean

    def to_json(self):
        return {"mean": np.atleast_1d(self.mean).tolist(), "std": np.atleast_1d(self.std).tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_stats(x):
    """Column mean and population std (constant columns get std 0)."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # treat numerically constant columns as constant
    std = np.where(std <= 1e-12 * np.maximum(1.0, np.abs(mean)), 0.0, std)
    return NormStats(mean, std)


def normalize(x, stats=None):
    """Z-score the columns of ``x``.

    With ``stats=None`` the statistics are fitted on ``x``; otherwise the
    saved statistics are applied.  Returns ``(z, stats)``.
    """
    if stats is None:
        stats = fit_stats(x)
    return stats.apply(x), stats


# --------------------------------------------------------------------------
# files


def write_feature_store(path, ids, features):
    features = np.asarray(features, dtype="<f4")
    count, dim = features.shape
    if count != len(ids):
        raise InvalidInput("ids and feature rows differ in length")
    if str(path).endswith(".csv"):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + [f"f{k}" for k in range(dim)])
            for i, row in zip(ids, features):
                w.writerow([i] + [repr(float(v)) for v in row])
        return
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", count, dim))
        for i in ids:
            b = str(i).encode("utf-8")
            fh.write(struct.pack("<I", len(b)))
            fh.write(b)
        fh.write(features.tobytes(order="C"))


def read_feature_store(path):
    """Returns ``(ids, float64 matrix)``."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(len(MAGIC))
            if head != MAGIC:
                return _read_feature_csv(path)
            count, dim = struct.unpack("<II", fh.read(8))
            ids = []
            for _ in range(count):
                (n,) = struct.unpack("<I", fh.read(4))
                ids.append(fh.read(n).decode("utf-8"))
            data = np.frombuffer(fh.read(4 * count * dim), dtype="<f4")
    except OSError as e:
        raise StoreError(f"cannot read feature store {path}: {e}") from e
    except struct.error as e:
        raise InvalidInput(f"truncated feature store {path}") from e
    if data.size != count * dim:
        raise InvalidInput(f"feature store {path}: expected {count * dim} floats, found {data.size}")
    return ids, data.reshape(count, dim).astype(np.float64)


def _read_feature_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise InvalidInput(f"{path}: expected header id,f0,f1,...")
    dim = len(rows[0]) - 1
    ids, data = [], []
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) != dim + 1:
            raise InvalidInput(f"{path}:{lineno}: expected {dim} features, found {len(r) - 1}")
        ids.append(r[0])
        data.append([float(v) for v in r[1:]])
    return ids, np.array(data, dtype=np.float64).reshape(len(ids), dim)


def write_houses_csv(path, houses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "lat", "lon", "price"])
        for h in houses:
            w.writerow([h.id, repr(h.location.latitude), repr(h.location.longitude), repr(h.price)])


def read_houses_csv(path):
    """Rows of ``(id, lat, lon, price)`` plus a list of per-row diagnostics."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [c.strip() for c in header[:4]] != ["id", "lat", "lon", "price"]:
                raise InvalidInput(f"{path}: header must be id,lat,lon,price")
            rows, problems = [], []
            for lineno, r in enumerate(reader, 2):
                if not r:
                    continue
                try:
                    hid, lat, lon, price = r[0], float(r[1]), float(r[2]), float(r[3])
                    GeoPoint(lat, lon)
                    if not (math.isfinite(price) and price > 0):
                        raise InvalidInput(f"non-positive price {price}")
                    if "," in hid or hid.endswith("*") or not hid:
                        raise InvalidInput(f"bad id {hid!r}")
                except (ValueError, IndexError) as e:
                    problems.append(f"{path}:{lineno}: {e}")
                    continue
                rows.append((hid, lat, lon, price))
    except OSError as e:
        raise StoreError(f"cannot read {path}: {e}") from e
    return rows, problems


def load_dataset(house_csv, feature_store):
    """Join the house table with the feature store by id, in CSV order.

    Every inconsistency is collected; if there is any, InvalidInput is
    raised with the full list.
    """
    rows, problems = read_houses_csv(house_csv)
    ids, feats = read_feature_store(feature_store)
    by_id = {}
    for k, i in enumerate(ids):
        if i in by_id:
            problems.append(f"{feature_store}: duplicate id {i!r}")
        by_id[i] = k
    seen = set()
    houses = []
    for hid, lat, lon, price in rows:
        if hid in seen:
            problems.append(f"{house_csv}: duplicate id {hid!r}")
            continue
        seen.add(hid)
        if hid not in by_id:
            problems.append(f"id {hid!r} missing from feature store")
            continue
        houses.append(House(hid, GeoPoint(lat, lon), price, feats[by_id[hid]]))
    for i in ids:
        if i not in seen:
            problems.append(f"id {i!r} present in feature store but not in {house_csv}")
    if problems:
        raise InvalidInput("; ".join(problems))
    return houses


def save_dataset(out_dir, houses, feature_name="features.bin"):
    os.makedirs(out_dir, exist_ok=True)
    write_houses_csv(os.path.join(out_dir, "houses.csv"), houses)
    write_feature_store(os.path.join(out_dir, feature_name), [h.id for h in houses], feature_matrix(houses))


# --------------------------------------------------------------------------
# optional outlier pre-filter


def filter_outliers(houses, kernel_cfg, k=3.0):
    """Drop houses whose price is more than ``k`` neighbor-stds from their neighbors' mean.

    Neighbors are the epsilon-neighborhood of each house.  Houses with fewer
    than two neighbors are kept.  Returns ``(kept, dropped)``.
    """
    from .geo_graph import build_graph

    g = build_graph(coords(houses), kernel_cfg)
    p = prices(houses)
    kept, dropped = [], []
    for i, h in enumerate(houses):
        nb, _ = g.neighbors(i)
        if len(nb) >= 2:
            mu, sd = p[nb].mean(), p[nb].std()
            if abs(h.price - mu) > k * sd:
                dropped.append(h)
                continue
        kept.append(h)
    return kept, dropped
