"""Random-walk sequence generation over a SimilarityGraph.

Each step from node ``i`` moves to neighbor ``j`` with probability
``w_ij / sum_k w_ik``.  All randomness comes from :mod:`geowalk.rng`
counter streams keyed by sequence index, so output never depends on
chunking or thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging

import numpy as np

from . import rng
from .errors import InvalidInput, NoWalkableNode

log = logging.getLogger(__name__)

CHUNK = 4096
MAX_ATTEMPTS_PER_SEQUENCE = 1000


@dataclass(frozen=True)
class WalkConfig:
    length: int = 10
    num_sequences: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if int(self.length) < 2:
            raise InvalidInput("sequence length must be >= 2")
        if int(self.num_sequences) < 1:
            raise InvalidInput("num_sequences must be >= 1")


@dataclass(frozen=True)
class WalkSequence:
    node_ids: tuple
    test_position: int = None

    def __len__(self):
        return len(self.node_ids)


class TransitionTable:
    """Per-row cumulative transition probabilities, searchable in bulk."""

    def __init__(self, g):
        self.g = g
        keys = np.empty(len(g.weights), dtype=np.float64)
        for i in range(g.node_count):
            lo, hi = g.indptr[i], g.indptr[i + 1]
            if hi == lo:
                continue
            w = g.weights[lo:hi]
            cdf = np.cumsum(w) / w.sum()
            cdf[-1] = 1.0
            keys[lo:hi] = i + cdf
        self.keys = keys

    def probabilities(self, i):
        lo, hi = self.g.indptr[i], self.g.indptr[i + 1]
        w = self.g.weights[lo:hi]
        return self.g.indices[lo:hi], w / w.sum()

    def step(self, nodes, u):
        """Next node for each walker at ``nodes`` given uniforms ``u``."""
        g = self.g
        k = np.searchsorted(self.keys, nodes + u, side="right")
        k = np.clip(k, g.indptr[nodes], g.indptr[nodes + 1] - 1)
        return g.indices[k]


def _walk_chunk(table, walkable, cfg, start, stop):
    idx = np.arange(start, stop, dtype=np.int64)
    L = cfg.length
    out = np.empty((len(idx), L), dtype=np.int64)
    u0 = rng.uniforms(cfg.seed, rng.WALK, idx, 0)
    cur = walkable[np.minimum((u0 * len(walkable)).astype(np.int64), len(walkable) - 1)]
    out[:, 0] = cur
    for t in range(1, L):
        cur = table.step(cur, rng.uniforms(cfg.seed, rng.WALK, idx, t))
        out[:, t] = cur
    return out


def walk_matrix(g, cfg, threads=1):
    """``(M, L)`` array of node indices; row ``m`` is walk number ``m``."""
    walkable = np.flatnonzero(g.degree > 0)
    if g.node_count == 0 or len(walkable) == 0:
        raise NoWalkableNode("graph has no node with a neighbor")
    table = TransitionTable(g)
    bounds = [(s, min(s + CHUNK, cfg.num_sequences)) for s in range(0, cfg.num_sequences, CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda b: _walk_chunk(table, walkable, cfg, *b), bounds))
    else:
        parts = [_walk_chunk(table, walkable, cfg, *b) for b in bounds]
    return np.concatenate(parts)


def random_walks(g, cfg, threads=1):
    """Training walks: ``cfg.num_sequences`` sequences of ``cfg.length`` nodes."""
    return [WalkSequence(tuple(int(v) for v in row)) for row in walk_matrix(g, cfg, threads)]


@dataclass
class TestWalks:
    """Test sequences in array form.

    ``nodes[k]`` is a sequence whose entry ``positions[k]`` is the test node
    ``owner[k]``; ``counts`` maps each test node (offset from train_count)
    to how many sequences it received.
    """

    nodes: np.ndarray
    positions: np.ndarray
    owner: np.ndarray
    counts: np.ndarray
    train_count: int

    def sequences(self):
        return [WalkSequence(tuple(int(v) for v in row), int(p))
                for row, p in zip(self.nodes, self.positions)]

    @property
    def starved(self):
        """Test nodes (absolute index) that received no sequence."""
        return np.flatnonzero(self.counts == 0) + self.train_count


def _test_node_walks(table, t, k, train_count, per_test, cfg):
    L = cfg.length
    stride = 2 * L - 1
    cap = MAX_ATTEMPTS_PER_SEQUENCE * per_test
    kept_nodes, kept_pos = [], []
    n_kept = 0
    attempt = 0
    batch = per_test
    while n_kept < per_test and attempt < cap:
        size = min(batch, cap - attempt)
        a = np.arange(attempt, attempt + size, dtype=np.int64)
        base = a * stride
        prefix_len = np.minimum((rng.uniforms(cfg.seed, rng.TEST, k, base) * L).astype(np.int64), L - 1)
        pre = np.full((size, L), t, dtype=np.int64)
        suf = np.full((size, L), t, dtype=np.int64)
        for s in range(1, L):
            pre[:, s] = table.step(pre[:, s - 1], rng.uniforms(cfg.seed, rng.TEST, k, base + s))
            suf[:, s] = table.step(suf[:, s - 1], rng.uniforms(cfg.seed, rng.TEST, k, base + L - 1 + s))
        cols = np.arange(L)
        # prefix uses steps 1..p, suffix uses steps 1..L-1-p
        pre_used = (cols[None, :] >= 1) & (cols[None, :] <= prefix_len[:, None])
        suf_used = (cols[None, :] >= 1) & (cols[None, :] <= (L - 1 - prefix_len)[:, None])
        bad = ((pre >= train_count) & pre_used).any(axis=1) | ((suf >= train_count) & suf_used).any(axis=1)
        for r in np.flatnonzero(~bad):
            p = prefix_len[r]
            kept_nodes.append(np.concatenate([pre[r, p:0:-1], [t], suf[r, 1:L - p]]))
            kept_pos.append(p)
            n_kept += 1
            if n_kept == per_test:
                break
        attempt += size
        batch = min(batch * 4, 64 * per_test)
    if n_kept < per_test:
        log.warning("test node %d: only %d of %d sequences after %d attempts",
                    t, n_kept, per_test, attempt)
    return kept_nodes, kept_pos


def test_walks(g_ext, train_count, per_test, cfg, threads=1):
    """Test sequences holding exactly one test node each.

    Walks start at the test node and extend both ways (a prefix and a suffix
    walk of total length L-1, split uniformly); any walk touching a test node
    again is rejected.  Isolated test nodes get zero sequences.
    """
    if per_test < 1:
        raise InvalidInput("per_test must be >= 1")
    m = g_ext.node_count - train_count
    if m < 1:
        raise InvalidInput("graph has no test nodes")
    table = TransitionTable(g_ext)

    def one(k):
        t = train_count + k
        if g_ext.degree[t] == 0:
            return [], []
        return _test_node_walks(table, t, k, train_count, per_test, cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, range(m)))
    else:
        results = [one(k) for k in range(m)]

    counts = np.array([len(r[0]) for r in results], dtype=np.int64)
    L = cfg.length
    nodes = [n for r in results for n in r[0]]
    pos = [p for r in results for p in r[1]]
    owner = np.repeat(np.arange(m, dtype=np.int64) + train_count, counts)
    nodes = np.array(nodes, dtype=np.int64).reshape(-1, L)
    if counts.min() == 0:
        log.warning("%d isolated test node(s) received no sequences", int((counts == 0).sum()))
    return TestWalks(nodes, np.array(pos, dtype=np.int64), owner, counts, train_count)


def test_sequences(g_ext, train_count, per_test, cfg, threads=1):
    """List-of-WalkSequence form of :func:`test_walks`."""
    return test_walks(g_ext, train_count, per_test, cfg, threads).sequences()


# --------------------------------------------------------------------------
# text format: one sequence per line, comma-separated ids, '*' marks the test node


def write_sequences(path, sequences, ids):
    with open(path, "w") as fh:
        for s in sequences:
            toks = [ids[v] + ("*" if k == s.test_position else "") for k, v in enumerate(s.node_ids)]
            fh.write(",".join(toks) + "\n")


def read_sequences(path, ids):
    index = {tok: i for i, tok in enumerate(ids)}
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            nodes, pos = [], None
            for k, tok in enumerate(line.split(",")):
                if tok.endswith("*"):
                    if pos is not None:
                        raise InvalidInput(f"{path}:{lineno}: more than one test marker")
                    pos, tok = k, tok[:-1]
                if tok not in index:
                    raise InvalidInput(f"{path}:{lineno}: unknown node id {tok!r}")
                nodes.append(index[tok])
            out.append(WalkSequence(tuple(nodes), pos))
    return out


# not pytest tests, despite the names
test_walks.__test__ = False
test_sequences.__test__ = False
