"""Split, train, predict, evaluate.

Training uses only training houses: the graph, the feature/price
standardisation and every mini-batch are built from records that are not
tainted (see :func:`geowalk.features.check_untainted`).  Test houses are
attached to the finished training graph at prediction time, each one gets
its own set of walks, and the per-sequence predictions at the test position
are averaged.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
import csv
import logging
import math
import time

import numpy as np

from . import net, rng
from .errors import InvalidInput, NumericalFailure
from .features import check_untainted, coords, feature_matrix, normalize, prices, taint
from .geo_graph import KernelConfig, attach_test_nodes, build_graph
from .lasso import lasso_fit
from .walks import WalkConfig, test_walks, walk_matrix

log = logging.getLogger(__name__)

PREDICT_CHUNK = 1024


@dataclass(frozen=True)
class TrainConfig:
    split_fraction: float = 0.8
    num_sequences: int = 200_000
    length: int = 10
    batch_size: int = 1024
    max_steps: int = 5000
    seed: int = 0
    hidden1: int = 400
    hidden2: int = 200
    lr: float = 1e-3
    rho: float = 0.9
    delta: float = 1e-8
    clip_norm: float = 5.0
    l2: float = 0.0
    sigma: float = 0.5
    epsilon: float = 5.0
    kernel_form: str = "squared_exponential"
    convergence_tol: float = 1e-5
    convergence_window: int = 50
    per_test: int = 100
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidInput("split_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        if self.max_steps < 0:
            raise InvalidInput("max_steps must be >= 0")

    @property
    def kernel(self):
        return KernelConfig(self.sigma, self.epsilon, self.kernel_form)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


# Desk-scale settings used by the synthetic benchmark.
BENCH_TRAIN = dict(num_sequences=20_000, batch_size=128, max_steps=1500,
                   hidden1=32, hidden2=16, lr=3e-3)


# --------------------------------------------------------------------------
# split


def split(houses, fraction=0.8, seed=0):
    """Uniform random train/test split; test records come back tainted."""
    n = len(houses)
    if n < 10:
        raise InvalidInput("split needs at least 10 houses")
    if not 0.0 < fraction < 1.0:
        raise InvalidInput("fraction must lie in (0, 1)")
    perm = rng.generator(seed, rng.SPLIT).permutation(n)
    n_train = int(math.floor(n * fraction))
    tr = np.sort(perm[:n_train])
    te = np.sort(perm[n_train:])
    return [houses[i] for i in tr], taint([houses[i] for i in te])


# --------------------------------------------------------------------------
# training


@dataclass
class TrainedModel:
    model: net.BlstmModel
    feature_stats: object
    price_stats: object
    config: TrainConfig
    train_ids: list
    log: list = field(default_factory=list)
    steps: int = 0
    graph: object = field(default=None, repr=False)

    def predict_sequences(self, features, threads=1):
        """Standardised features ``(B, T, D)`` -> de-standardised prices ``(B, T)``."""
        return self.price_stats.invert(forward_chunked(self.model, features, threads))


def forward_chunked(model, X, threads=1):
    bounds = [(s, min(s + PREDICT_CHUNK, len(X))) for s in range(0, len(X), PREDICT_CHUNK)]

    def run(b):
        return net.blstm_forward(model, X[b[0]:b[1]])[0]

    if not bounds:
        return np.zeros((0, X.shape[1]))
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    return np.concatenate(parts)


def _check_finite(model, loss_value, step):
    if not math.isfinite(loss_value):
        raise NumericalFailure(f"non-finite loss at step {step}")
    for a in model.arrays():
        if not np.all(np.isfinite(a)):
            raise NumericalFailure(f"non-finite parameter at step {step}")


def prepare(train_houses, cfg):
    """Graph, standardisation and walks for a training set."""
    check_untainted(train_houses, "graph construction")
    g = build_graph(coords(train_houses), cfg.kernel, ids=[h.id for h in train_houses])
    check_untainted(train_houses, "normalisation fitting")
    Z, fstats = normalize(feature_matrix(train_houses))
    zp, pstats = normalize(prices(train_houses)[:, None])
    walks = walk_matrix(g, WalkConfig(cfg.length, cfg.num_sequences, cfg.seed), threads=cfg.threads)
    return g, Z, zp[:, 0], fstats, pstats, walks


def train(train_houses, cfg=TrainConfig(), callback=None, prepared=None):
    """Train the B-LSTM on random walks over the training houses.

    Runs RMSProp over shuffled mini-batches until ``cfg.max_steps`` or until
    the mean loss of the last ``convergence_window`` steps differs from the
    window before it by less than ``convergence_tol`` (relative).  The log
    holds ``(step, loss, wall_seconds)`` rows.  ``callback(step, loss,
    trained)`` may return True to stop early.
    """
    if not train_houses:
        raise InvalidInput("empty training set")
    t0 = time.perf_counter()
    g, Z, zp, fstats, pstats, walks = prepared or prepare(train_houses, cfg)
    tainted = np.array([h.tainted for h in train_houses])

    model = net.init_model((Z.shape[1], cfg.hidden1, cfg.hidden2), cfg.seed)
    opt = net.RmsPropState.for_model(model, cfg.rho, cfg.lr, cfg.delta)
    trained = TrainedModel(model, fstats, pstats, cfg, [h.id for h in train_houses], graph=g)

    M = len(walks)
    B = min(cfg.batch_size, M)
    per_epoch = max(1, M // B)
    losses = []
    order = None
    step = 0
    w = cfg.convergence_window
    while step < cfg.max_steps:
        epoch, k = divmod(step, per_epoch)
        if k == 0:
            order = rng.generator(cfg.seed, rng.SHUFFLE, epoch).permutation(M)
        idx = walks[order[k * B:(k + 1) * B]]
        if tainted[idx].any():
            check_untainted([train_houses[i] for i in np.unique(idx)], "a training batch")
        X, Y = Z[idx], zp[idx]
        y, cache = net.blstm_forward(model, X)
        value = net.loss(y, Y)
        grads = net.backward(model, cache, Y, y)
        if cfg.l2:
            for p, gr in zip(model.arrays(), grads.arrays()):
                gr += 2.0 * cfg.l2 * p
        net.clip_by_global_norm(grads, cfg.clip_norm)
        net.rmsprop_step(model, grads, opt)
        step += 1
        _check_finite(model, value, step)
        losses.append(value)
        trained.log.append((step, value, time.perf_counter() - t0))
        trained.steps = step
        if callback is not None and callback(step, value, trained):
            break
        if len(losses) >= 2 * w:
            prev = np.mean(losses[-2 * w:-w])
            last = np.mean(losses[-w:])
            if abs(prev - last) <= cfg.convergence_tol * abs(prev):
                log.info("converged at step %d", step)
                break
    return trained


def training_mape(trained, train_houses, walks, max_sequences=2000):
    """MAPE over every position of (up to ``max_sequences``) training walks."""
    Z = trained.feature_stats.apply(feature_matrix(train_houses))
    p = prices(train_houses)
    idx = walks[:max_sequences]
    pred = trained.predict_sequences(Z[idx])
    return float(np.mean(np.abs(p[idx] - pred) / p[idx]))


# --------------------------------------------------------------------------
# prediction


@dataclass
class PredictionSummary:
    id: str
    truth: float
    predictions: np.ndarray
    mean: float
    std: float
    best: float
    flagged: bool = False

    @property
    def n_sequences(self):
        return len(self.predictions)

    @classmethod
    def from_predictions(cls, hid, truth, preds):
        preds = np.asarray(preds, dtype=np.float64)
        best = float(preds[np.argmin(np.abs(preds - truth))])
        return cls(hid, float(truth), preds, float(preds.mean()), float(preds.std()), best)

    @classmethod
    def fallback(cls, hid, truth, value):
        return cls(hid, float(truth), np.zeros(0), float(value), 0.0, float(value), True)


def predict(trained, train_houses, test_houses, per_test=100, cfg=None, threads=None):
    """Per-test-house prediction summaries.

    Test houses with no training neighbor (or whose walks were all
    rejected) get the training mean price and ``flagged=True``.
    """
    cfg = cfg or trained.config
    threads = cfg.threads if threads is None else threads
    n_train = len(train_houses)
    g = trained.graph
    if g is None or g.node_count != n_train:
        check_untainted(train_houses, "graph construction")
        g = build_graph(coords(train_houses), cfg.kernel, ids=[h.id for h in train_houses])
    g_ext = attach_test_nodes(g, n_train, coords(test_houses), cfg.kernel,
                              test_ids=[h.id for h in test_houses])
    tw = test_walks(g_ext, n_train, per_test, WalkConfig(cfg.length, 1, cfg.seed), threads=threads)

    Z = trained.feature_stats.apply(np.vstack([feature_matrix(train_houses), feature_matrix(test_houses)]))
    if len(tw.nodes):
        pred = trained.predict_sequences(Z[tw.nodes], threads)
        at_test = pred[np.arange(len(pred)), tw.positions]
    else:
        at_test = np.zeros(0)
    fallback_price = float(trained.price_stats.mean[0])
    out = []
    start = 0
    for k, h in enumerate(test_houses):
        c = int(tw.counts[k])
        if c == 0:
            out.append(PredictionSummary.fallback(h.id, h.price, fallback_price))
        else:
            out.append(PredictionSummary.from_predictions(h.id, h.price, at_test[start:start + c]))
        start += c
    return out


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    mae: float
    mape: float
    n: int

    @property
    def mape_percent(self):
        return 100.0 * self.mape


def metrics(truth, pred):
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if len(t) == 0 or t.shape != p.shape:
        raise InvalidInput("metrics need equal-length, non-empty truth and prediction arrays")
    err = np.abs(t - p)
    return Metrics(float(err.mean()), float((err / t).mean()), len(t))


def evaluate(summaries, mode="average", include_flagged=True):
    """MAE and MAPE over test houses.

    ``mode="best"`` uses the per-house prediction closest to the truth; it
    peeks at the answer and is only a diagnostic upper bound.
    """
    if mode not in ("average", "best"):
        raise InvalidInput(f"unknown mode {mode!r}")
    rows = [s for s in summaries if include_flagged or not s.flagged]
    if not rows:
        raise InvalidInput("no summaries to evaluate")
    key = "mean" if mode == "average" else "best"
    return metrics([s.truth for s in rows], [getattr(s, key) for s in rows])


def confidence_groups(summaries, k=3, mode="average"):
    """Split houses into ``k`` groups by ascending prediction std and score each.

    Groups have ``len // k`` houses, the remainder goes to the last one;
    ties keep input order.  Returns a list of ``(Metrics, mean_std)``.
    """
    if len(summaries) < k:
        raise InvalidInput(f"need at least {k} summaries")
    stds = np.array([s.std for s in summaries])
    order = np.argsort(stds, kind="stable")
    size = len(summaries) // k
    out = []
    for g in range(k):
        sel = order[g * size:(g + 1) * size if g < k - 1 else len(order)]
        group = [summaries[i] for i in sel]
        out.append((evaluate(group, mode), float(stds[sel].mean())))
    return out


def metrics_report(summaries, mode="average", groups=3):
    m = evaluate(summaries, mode)
    report = {
        "mode": mode,
        "mae": m.mae,
        "mape_percent": round(m.mape_percent, 2),
        "n_houses": m.n,
        "n_flagged": sum(1 for s in summaries if s.flagged),
        "per_group": [],
    }
    unflagged = [s for s in summaries if not s.flagged]
    if report["n_flagged"] and unflagged:
        mu = evaluate(unflagged, mode)
        report["excluding_flagged"] = {"mae": mu.mae, "mape_percent": round(mu.mape_percent, 2),
                                       "n_houses": mu.n}
    if groups and len(summaries) >= groups:
        for g, (gm, mean_std) in enumerate(confidence_groups(summaries, groups, mode), 1):
            report["per_group"].append({"group": g, "mae": gm.mae, "mape_percent": round(gm.mape_percent, 2),
                                        "n_houses": gm.n, "mean_std": mean_std})
    return report


# --------------------------------------------------------------------------
# baselines


def lasso_baseline(train_houses, test_houses, seed=0):
    """LASSO on standardised features; lam chosen by 5-fold CV on the training set."""
    check_untainted(train_houses, "LASSO fitting")
    Xtr, stats = normalize(feature_matrix(train_houses))
    fit = lasso_fit(Xtr, prices(train_houses), seed=seed)
    pred = fit.predict(stats.apply(feature_matrix(test_houses)))
    return fit, metrics(prices(test_houses), pred)


def global_mean_baseline(train_houses, test_houses):
    p = prices(test_houses)
    return metrics(p, np.full(len(p), prices(train_houses).mean()))


# --------------------------------------------------------------------------
# files


PREDICTION_COLUMNS = ["id", "truth", "mean", "std", "n_sequences", "flagged"]


def write_predictions(path, summaries, sequences_path=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PREDICTION_COLUMNS)
        for s in summaries:
            w.writerow([s.id, repr(s.truth), repr(s.mean), repr(s.std), s.n_sequences, int(s.flagged)])
    if sequences_path:
        with open(sequences_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "prediction"])
            for s in summaries:
                for p in s.predictions:
                    w.writerow([s.id, repr(float(p))])


def read_predictions(path, sequences_path=None):
    per_house = {}
    if sequences_path:
        with open(sequences_path, newline="") as fh:
            for row in csv.DictReader(fh):
                per_house.setdefault(row["id"], []).append(float(row["prediction"]))
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PREDICTION_COLUMNS:
            raise InvalidInput(f"{path}: header must be {','.join(PREDICTION_COLUMNS)}")
        for row in reader:
            truth, mean = float(row["truth"]), float(row["mean"])
            preds = np.array(per_house.get(row["id"], []), dtype=np.float64)
            if len(preds):
                best = float(preds[np.argmin(np.abs(preds - truth))])
            else:
                # without per-sequence values the mean is the only candidate
                best = mean
            out.append(PredictionSummary(row["id"], truth, preds, mean, float(row["std"]), best,
                                         bool(int(row["flagged"]))))
    return out


def write_training_log(path, log_rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "wall_time"])
        for step, value, wall in log_rows:
            w.writerow([step, repr(value), f"{wall:.3f}"])
