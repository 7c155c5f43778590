"""Geodesic distances, Gaussian similarities and the epsilon-neighborhood graph.

Distances are in statute miles on the WGS-84 ellipsoid.  Graphs are stored
in CSR form (``indptr``, ``indices``, ``weights``) and are immutable once
built.
"""

from dataclasses import dataclass, field
import enum
import logging
import math

import numpy as np

from .errors import InvalidInput, VincentyNonConvergence

log = logging.getLogger(__name__)

METERS_PER_MILE = 1609.344
WGS84_A = 6378137.0
WGS84_F = 1 / 298.257223563
WGS84_B = (1 - WGS84_F) * WGS84_A
MEAN_EARTH_RADIUS_M = 6371008.8

BRUTE_FORCE_BELOW = 200
_CHUNK = 1 << 18


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        lat, lon = float(self.latitude), float(self.longitude)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidInput(f"non-finite coordinate ({lat}, {lon})")
        if not -90.0 <= lat <= 90.0:
            raise InvalidInput(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise InvalidInput(f"longitude {lon} outside [-180, 180]")


class KernelForm(enum.Enum):
    SQUARED_EXPONENTIAL = "squared_exponential"
    LINEAR_EXPONENT = "linear_exponent"


@dataclass(frozen=True)
class KernelConfig:
    sigma: float = 0.5
    epsilon: float = 5.0
    kernel_form: KernelForm = KernelForm.SQUARED_EXPONENTIAL

    def __post_init__(self):
        for name in ("sigma", "epsilon"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidInput(f"{name} must be finite and > 0, got {v}")
        object.__setattr__(self, "kernel_form", KernelForm(self.kernel_form))


# --------------------------------------------------------------------------
# distances


def _canonical_order(lat1, lon1, lat2, lon2):
    # evaluate every pair in one fixed orientation so d(a, b) == d(b, a) bitwise
    swap = (lat1 > lat2) | ((lat1 == lat2) & (lon1 > lon2))
    return (np.where(swap, lat2, lat1), np.where(swap, lon2, lon1),
            np.where(swap, lat1, lat2), np.where(swap, lon1, lon2))


def vincenty_miles(lat1, lon1, lat2, lon2, tol=1e-12, max_iter=200):
    """Vectorised Vincenty inverse solution.

    Returns ``(miles, converged)``.  Where the iteration fails to converge
    (nearly antipodal points) the distance entry is NaN and ``converged`` is
    False; see :func:`distance_miles` for the fallback.
    """
    lat1, lon1, lat2, lon2 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (lat1, lon1, lat2, lon2)))
    lat1, lon1, lat2, lon2 = _canonical_order(lat1, lon1, lat2, lon2)
    shape = lat1.shape
    lat1, lon1, lat2, lon2 = (v.ravel() for v in (lat1, lon1, lat2, lon2))

    a, b, f = WGS84_A, WGS84_B, WGS84_F
    L = np.radians(lon2 - lon1)
    U1 = np.arctan((1 - f) * np.tan(np.radians(lat1)))
    U2 = np.arctan((1 - f) * np.tan(np.radians(lat2)))
    sinU1, cosU1 = np.sin(U1), np.cos(U1)
    sinU2, cosU2 = np.sin(U2), np.cos(U2)

    n = L.size
    lam = L.copy()
    sin_sigma = np.zeros(n)
    cos_sigma = np.ones(n)
    sigma = np.zeros(n)
    cos_sq_alpha = np.ones(n)
    cos2sm = np.zeros(n)
    active = np.ones(n, dtype=bool)
    converged = np.zeros(n, dtype=bool)

    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        lm = lam[idx]
        sin_lam, cos_lam = np.sin(lm), np.cos(lm)
        s1, c1, s2, c2 = sinU1[idx], cosU1[idx], sinU2[idx], cosU2[idx]
        ss = np.hypot(c2 * sin_lam, c1 * s2 - s1 * c2 * cos_lam)
        coincident = ss == 0.0
        cs = s1 * s2 + c1 * c2 * cos_lam
        sg = np.arctan2(ss, cs)
        with np.errstate(invalid="ignore", divide="ignore"):
            sin_alpha = np.where(coincident, 0.0, c1 * c2 * sin_lam / ss)
        csa = 1.0 - sin_alpha ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            c2m = np.where(csa != 0.0, cs - 2.0 * s1 * s2 / csa, 0.0)
        C = f / 16.0 * csa * (4.0 + f * (4.0 - 3.0 * csa))
        lam_new = L[idx] + (1.0 - C) * f * sin_alpha * (
            sg + C * ss * (c2m + C * cs * (-1.0 + 2.0 * c2m ** 2)))

        sin_sigma[idx], cos_sigma[idx], sigma[idx] = ss, cs, sg
        cos_sq_alpha[idx], cos2sm[idx] = csa, c2m
        done = coincident | (np.abs(lam_new - lm) <= tol)
        lam[idx] = lam_new
        converged[idx[done]] = True
        active[idx[done]] = False

    u_sq = cos_sq_alpha * (a * a - b * b) / (b * b)
    A = 1 + u_sq / 16384 * (4096 + u_sq * (-768 + u_sq * (320 - 175 * u_sq)))
    B = u_sq / 1024 * (256 + u_sq * (-128 + u_sq * (74 - 47 * u_sq)))
    delta_sigma = B * sin_sigma * (cos2sm + B / 4 * (
        cos_sigma * (-1 + 2 * cos2sm ** 2)
        - B / 6 * cos2sm * (-3 + 4 * sin_sigma ** 2) * (-3 + 4 * cos2sm ** 2)))
    meters = b * A * (sigma - delta_sigma)
    meters = np.where(sin_sigma == 0.0, 0.0, meters)
    miles = np.where(converged, meters / METERS_PER_MILE, np.nan)
    return miles.reshape(shape), converged.reshape(shape)


def great_circle_miles(lat1, lon1, lat2, lon2):
    """Spherical law of cosines on the mean Earth radius."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(np.asarray(lon2, dtype=np.float64) - lon1)
    c = np.sin(p1) * np.sin(p2) + np.cos(p1) * np.cos(p2) * np.cos(dl)
    return np.arccos(np.clip(c, -1.0, 1.0)) * MEAN_EARTH_RADIUS_M / METERS_PER_MILE


def distance_miles(lat1, lon1, lat2, lon2):
    """Vincenty distance with a great-circle fallback.

    Returns ``(miles, fallback_mask)``; the mask marks pairs that needed the
    spherical fallback.
    """
    miles, ok = vincenty_miles(lat1, lon1, lat2, lon2)
    if ok.all():
        return miles, ~ok
    bad = ~ok
    lat1, lon1, lat2, lon2 = np.broadcast_arrays(lat1, lon1, lat2, lon2)
    miles = np.array(miles, copy=True)
    miles[bad] = great_circle_miles(lat1[bad], lon1[bad], lat2[bad], lon2[bad])
    log.warning("Vincenty did not converge for %d pair(s); used great-circle distance", bad.sum())
    return miles, bad


def vincenty_distance(a, b):
    """Geodesic distance between two GeoPoints in miles.

    Raises VincentyNonConvergence for (nearly) antipodal pairs.
    """
    miles, ok = vincenty_miles(a.latitude, a.longitude, b.latitude, b.longitude)
    if not ok:
        raise VincentyNonConvergence(f"no convergence between {a} and {b}")
    return float(miles)


# --------------------------------------------------------------------------
# kernel


def similarity(d, cfg):
    """Gaussian similarity of a distance (miles); 1 at d = 0, decreasing."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise InvalidInput("distance must be non-negative")
    two_s2 = 2.0 * cfg.sigma ** 2
    if cfg.kernel_form is KernelForm.SQUARED_EXPONENTIAL:
        s = np.exp(-(d * d) / two_s2)
    else:
        s = np.exp(-d / two_s2)
    return float(s) if s.ndim == 0 else s


# --------------------------------------------------------------------------
# graph


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Weighted undirected graph in CSR form.

    ``ids`` holds one payload token per node.  For graphs extended with test
    nodes, nodes ``>= train_count`` are test nodes.
    """

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    ids: tuple = ()
    train_count: int = -1
    fallback_pairs: int = 0
    coords: tuple = None
    _degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("indptr", "indices", "weights"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        deg = np.diff(self.indptr)
        deg.setflags(write=False)
        object.__setattr__(self, "_degree", deg)
        if self.train_count < 0:
            object.__setattr__(self, "train_count", self.node_count)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(str(i) for i in range(self.node_count)))
        if self.coords is not None:
            lat, lon = (np.array(c, dtype=np.float64) for c in self.coords)
            lat.setflags(write=False)
            lon.setflags(write=False)
            object.__setattr__(self, "coords", (lat, lon))

    @property
    def node_count(self):
        return len(self.indptr) - 1

    @property
    def edge_count(self):
        return len(self.indices) // 2

    @property
    def degree(self):
        return self._degree

    @property
    def isolated_nodes(self):
        return np.flatnonzero(self._degree == 0)

    @property
    def isolated_test_nodes(self):
        iso = self.isolated_nodes
        return iso[iso >= self.train_count]

    def neighbors(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def edges(self):
        """Array of (i, j, w) rows with i < j."""
        rows = np.repeat(np.arange(self.node_count), self._degree)
        keep = rows < self.indices
        return rows[keep], self.indices[keep], self.weights[keep]

    def summary(self):
        return {
            "node_count": int(self.node_count),
            "edge_count": int(self.edge_count),
            "isolated_nodes": [self.ids[i] for i in self.isolated_nodes],
            "mean_degree": float(self._degree.mean()) if self.node_count else 0.0,
        }

    @classmethod
    def from_edges(cls, n, i, j, w, **kw):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        ww = np.concatenate([w, w])
        order = np.lexsort((dst, src))
        src, dst, ww = src[order], dst[order], ww[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(indptr, dst, ww, **kw)

    def save(self, path):
        extra = {}
        if self.coords is not None:
            extra = {"lat": self.coords[0], "lon": self.coords[1]}
        with open(path, "wb") as fh:
            np.savez(fh, indptr=self.indptr, indices=self.indices, weights=self.weights,
                     ids=np.array(self.ids, dtype=str), train_count=self.train_count, **extra)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            coords = (z["lat"], z["lon"]) if "lat" in z.files else None
            return cls(z["indptr"], z["indices"], z["weights"],
                       ids=tuple(str(s) for s in z["ids"]), train_count=int(z["train_count"]),
                       coords=coords)


def _coords(points):
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        for lat, lon in arr:
            GeoPoint(lat, lon)
        return arr[:, 0].copy(), arr[:, 1].copy()
    lat = np.array([p.latitude for p in points], dtype=np.float64)
    lon = np.array([p.longitude for p in points], dtype=np.float64)
    return lat, lon


def _pair_edges(lat, lon, ii, jj, cfg):
    """Distances for candidate pairs, filtered to d <= epsilon."""
    out_i, out_j, out_d = [], [], []
    fallback = 0
    for s in range(0, len(ii), _CHUNK):
        a, b = ii[s:s + _CHUNK], jj[s:s + _CHUNK]
        d, fb = distance_miles(lat[a], lon[a], lat[b], lon[b])
        fallback += int(fb.sum())
        keep = d <= cfg.epsilon
        out_i.append(a[keep])
        out_j.append(b[keep])
        out_d.append(d[keep])
    if not out_i:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0), 0
    return np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_d), fallback


def brute_force_pairs(n):
    i, j = np.triu_indices(n, k=1)
    return i.astype(np.int64), j.astype(np.int64)


def grid_candidate_pairs(lat, lon, epsilon):
    """Candidate pairs (i < j) from a lat/lon bucket grid.

    Cells are at least ``epsilon`` miles wide, so every pair within epsilon
    lies in the same or adjacent cells.  Returns None when the grid cannot be
    trusted (antimeridian span, polar data); callers then brute-force.
    """
    if lon.max() - lon.min() > 180.0:
        return None
    max_abs_lat = float(np.max(np.abs(lat)))
    # 68.7 mi/deg is below the meridional minimum; cos() margin of 0.5 deg
    lat_cell = epsilon / 68.7
    cos_lat = math.cos(math.radians(min(90.0, max_abs_lat + 0.5)))
    if cos_lat < 1e-3:
        return None
    lon_cell = epsilon / (68.7 * cos_lat)
    cy = np.floor((lat - lat.min()) / lat_cell).astype(np.int64)
    cx = np.floor((lon - lon.min()) / lon_cell).astype(np.int64)
    ny = int(cy.max()) + 1
    key = cx * ny + cy
    order = np.argsort(key, kind="stable")
    skey = key[order]
    cells, starts = np.unique(skey, return_index=True)
    ends = np.append(starts[1:], len(skey))
    lookup = {int(c): (int(s), int(e)) for c, s, e in zip(cells, starts, ends)}

    pi, pj = [], []
    # half of the 8-neighborhood, plus the cell itself
    offsets = [(1, -1), (1, 0), (1, 1), (0, 1)]
    for c, (s, e) in lookup.items():
        members = order[s:e]
        x, y = divmod(c, ny)
        a, b = np.triu_indices(len(members), k=1)
        pi.append(members[a])
        pj.append(members[b])
        for dx, dy in offsets:
            yy = y + dy
            if yy < 0 or yy >= ny:
                continue
            other = lookup.get((x + dx) * ny + yy)
            if other is None:
                continue
            om = order[other[0]:other[1]]
            pi.append(np.repeat(members, len(om)))
            pj.append(np.tile(om, len(members)))
    i = np.concatenate(pi)
    j = np.concatenate(pj)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    return lo.astype(np.int64), hi.astype(np.int64)


def build_graph(points, cfg=KernelConfig(), ids=None):
    """Epsilon-neighborhood graph over ``points`` with Gaussian edge weights.

    ``points`` is a sequence of GeoPoint or an ``(n, 2)`` lat/lon array.
    Isolated nodes are allowed and logged.
    """
    lat, lon = _coords(points)
    n = len(lat)
    if n < 2:
        raise InvalidInput("build_graph needs at least 2 points")
    cand = None if n < BRUTE_FORCE_BELOW else grid_candidate_pairs(lat, lon, cfg.epsilon)
    if cand is None:
        cand = brute_force_pairs(n)
    i, j, d, fallback = _pair_edges(lat, lon, *cand, cfg)
    g = SimilarityGraph.from_edges(n, i, j, similarity(d, cfg),
                                   ids=tuple(ids) if ids is not None else (),
                                   fallback_pairs=fallback, coords=(lat, lon))
    if len(g.isolated_nodes):
        log.info("graph has %d isolated node(s)", len(g.isolated_nodes))
    return g


def attach_test_nodes(g, train_count, test_points, cfg=KernelConfig(), test_ids=None):
    """Append test nodes to a training graph.

    Test nodes connect to training nodes by the same epsilon/sigma rule;
    test-test edges are never added.  The training subgraph is unchanged.
    """
    if g.node_count != train_count:
        raise InvalidInput(f"graph has {g.node_count} nodes, expected {train_count} training nodes")
    t_lat, t_lon = _coords(test_points)
    m = len(t_lat)
    if m == 0:
        raise InvalidInput("attach_test_nodes needs at least one test point")
    if g.coords is None:
        raise InvalidInput("graph carries no coordinates; build it with build_graph()")
    tr_lat, tr_lon = g.coords
    lat = np.concatenate([tr_lat, t_lat])
    lon = np.concatenate([tr_lon, t_lon])
    tt, rr = np.meshgrid(np.arange(m, dtype=np.int64) + train_count,
                         np.arange(train_count, dtype=np.int64), indexing="ij")
    i, j, d, fallback = _pair_edges(lat, lon, rr.ravel(), tt.ravel(), cfg)
    r0, r1, w0 = g.edges()
    ids = tuple(g.ids) + (tuple(test_ids) if test_ids is not None
                          else tuple(str(train_count + k) for k in range(m)))
    ext = SimilarityGraph.from_edges(
        train_count + m,
        np.concatenate([r0, i]), np.concatenate([r1, j]),
        np.concatenate([w0, similarity(d, cfg)]),
        ids=ids, train_count=train_count, fallback_pairs=g.fallback_pairs + fallback,
        coords=(lat, lon))
    iso = ext.isolated_test_nodes
    if len(iso):
        log.info("%d test node(s) have no training neighbor", len(iso))
    return ext

