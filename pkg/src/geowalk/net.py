"""Stacked bidirectional LSTM regressor in plain numpy (float64).

Each cell uses peephole connections on the input, forget and output gates::

    i_t = sig(Wx_i x + Wh_i h_prev + p_i * c_prev + b_i)
    f_t = sig(Wx_f x + Wh_f h_prev + p_f * c_prev + b_f)
    c_t = f_t * c_prev + i_t * tanh(Wx_c x + Wh_c h_prev + b_c)
    o_t = sig(Wx_o x + Wh_o h_prev + p_o * c_t + b_o)
    h_t = o_t * tanh(c_t)

Weights of the four blocks are stacked row-wise in the order i, f, c, o so a
whole step is one matrix product.  Peepholes are diagonal (vectors).

Two bidirectional layers feed a linear head that emits one scalar per
position.  Batches are arrays of shape ``(batch, time, features)``.
"""

from dataclasses import dataclass, field
import json
import os
import shutil
import tempfile

import numpy as np

from . import rng
from .errors import InvalidInput, StoreError

VERSION = "geowalk-blstm/1"
GATES = "ifco"
PEEP_GATES = "ifo"


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmCellParams:
    Wx: np.ndarray  # (4H, D_in)
    Wh: np.ndarray  # (4H, H)
    Wc: np.ndarray  # (3, H) peepholes for i, f, o
    b: np.ndarray   # (4H,)

    @property
    def hidden(self):
        return self.Wh.shape[1]

    @property
    def input_dim(self):
        return self.Wx.shape[1]

    def arrays(self):
        return [self.Wx, self.Wh, self.Wc, self.b]

    @classmethod
    def zeros(cls, d_in, h):
        return cls(np.zeros((4 * h, d_in)), np.zeros((4 * h, h)), np.zeros((3, h)), np.zeros(4 * h))

    def check(self):
        h = self.Wh.shape[1]
        if (self.Wx.shape[0] != 4 * h or self.Wh.shape != (4 * h, h)
                or self.Wc.shape != (3, h) or self.b.shape != (4 * h,)):
            raise InvalidInput("inconsistent LSTM cell parameter shapes")


@dataclass
class BlstmModel:
    """Two bidirectional LSTM layers plus a linear head.

    ``cells`` is ``[layer1_fwd, layer1_bwd, layer2_fwd, layer2_bwd]``.
    Gradients are returned as BlstmModel instances too.
    """

    cells: list
    head_w: np.ndarray  # (2 * H2,)
    head_b: np.ndarray  # (1,)
    version: str = field(default=VERSION)

    @property
    def dims(self):
        return (self.cells[0].input_dim, self.cells[0].hidden, self.cells[2].hidden)

    def arrays(self):
        out = []
        for c in self.cells:
            out.extend(c.arrays())
        out.extend([self.head_w, self.head_b])
        return out

    @classmethod
    def zeros(cls, d, h1, h2):
        return cls([LstmCellParams.zeros(d, h1), LstmCellParams.zeros(d, h1),
                    LstmCellParams.zeros(2 * h1, h2), LstmCellParams.zeros(2 * h1, h2)],
                   np.zeros(2 * h2), np.zeros(1))

    def zeros_like(self):
        return BlstmModel.zeros(*self.dims)

    def copy(self):
        m = self.zeros_like()
        for dst, src in zip(m.arrays(), self.arrays()):
            dst[...] = src
        return m

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())

    # -- flat serialisation in documented order --------------------------

    def _blocks(self):
        """Views in checkpoint order: per cell, per gate i,f,c,o: Wx, Wh, Wc (not c), b; then head."""
        views = []
        for c in self.cells:
            h = c.hidden
            for k, g in enumerate(GATES):
                rows = slice(k * h, (k + 1) * h)
                views.append(c.Wx[rows])
                views.append(c.Wh[rows])
                if g in PEEP_GATES:
                    views.append(c.Wc[PEEP_GATES.index(g)])
                views.append(c.b[rows])
        views.extend([self.head_w, self.head_b])
        return views

    def to_vector(self):
        return np.concatenate([v.ravel() for v in self._blocks()])

    @classmethod
    def from_vector(cls, dims, vec):
        m = cls.zeros(*dims)
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for v in m._blocks():
            n = v.size
            if pos + n > vec.size:
                raise InvalidInput("parameter vector too short for model dims")
            v[...] = vec[pos:pos + n].reshape(v.shape)
            pos += n
        if pos != vec.size:
            raise InvalidInput(f"parameter vector has {vec.size - pos} extra values")
        return m

    def to_bytes(self):
        return self.to_vector().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, dims, blob):
        return cls.from_vector(dims, np.frombuffer(blob, dtype="<f8"))


def init_model(dims, seed):
    """Uniform(-1/sqrt(fan_in), +) cell weights, forget bias 1, other biases 0.

    The output head starts at zero, so an untrained model predicts its bias.
    """
    d, h1, h2 = (int(v) for v in dims)
    if min(d, h1, h2) < 1:
        raise InvalidInput(f"invalid dims {dims}")
    gen = rng.generator(seed, rng.INIT)
    m = BlstmModel.zeros(d, h1, h2)

    def u(shape, fan_in):
        r = 1.0 / np.sqrt(fan_in)
        return gen.uniform(-r, r, size=shape)

    for c in m.cells:
        h, din = c.hidden, c.input_dim
        c.Wx[...] = u(c.Wx.shape, din)
        c.Wh[...] = u(c.Wh.shape, h)
        c.Wc[...] = u(c.Wc.shape, h)
        c.b[h:2 * h] = 1.0
    return m


# --------------------------------------------------------------------------
# single step and per-direction passes


def lstm_step(p, x, h_prev, c_prev):
    """One cell update; inputs may be vectors or ``(batch, .)`` arrays."""
    p.check()
    x, h_prev, c_prev = (np.asarray(v, dtype=np.float64) for v in (x, h_prev, c_prev))
    if x.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden or c_prev.shape[-1] != p.hidden:
        raise InvalidInput("lstm_step input shapes do not match the cell")
    h_t, c_t, _ = _step(p, x @ p.Wx.T + p.b, h_prev, c_prev)
    return h_t, c_t


def _step(p, xw, h_prev, c_prev):
    H = p.hidden
    a = xw + h_prev @ p.Wh.T
    i = sigmoid(a[..., :H] + p.Wc[0] * c_prev)
    f = sigmoid(a[..., H:2 * H] + p.Wc[1] * c_prev)
    g = np.tanh(a[..., 2 * H:3 * H])
    c = f * c_prev + i * g
    o = sigmoid(a[..., 3 * H:] + p.Wc[2] * c)
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, g, o, c, tc)


def _direction_forward(p, X, reverse):
    B, T, _ = X.shape
    H = p.hidden
    XW = (X.reshape(B * T, -1) @ p.Wx.T + p.b).reshape(B, T, 4 * H)
    out = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        h_prev, c_prev = h, c
        h, c, parts = _step(p, XW[:, t], h_prev, c_prev)
        out[:, t] = h
        steps.append((t, h_prev, c_prev, parts))
    return out, (X, steps)


def _direction_backward(p, cache, dout, grad):
    X, steps = cache
    B, T, _ = X.shape
    H = p.hidden
    dA = np.empty((B, T, 4 * H))
    Hprev = np.empty((B, T, H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    pi, pf, po = p.Wc
    dpeep = np.zeros((3, H))
    for t, h_prev, c_prev, (i, f, g, o, c, tc) in reversed(steps):
        dh = dout[:, t] + dh_next
        dao = dh * tc * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tc * tc) + dao * po
        dai = dc * g * i * (1.0 - i)
        daf = dc * c_prev * f * (1.0 - f)
        dag = dc * i * (1.0 - g * g)
        dpeep[0] += (dai * c_prev).sum(axis=0)
        dpeep[1] += (daf * c_prev).sum(axis=0)
        dpeep[2] += (dao * c).sum(axis=0)
        da = np.concatenate([dai, daf, dag, dao], axis=1)
        dA[:, t] = da
        Hprev[:, t] = h_prev
        dh_next = da @ p.Wh
        dc_next = dc * f + dai * pi + daf * pf
    dA2 = dA.reshape(B * T, 4 * H)
    grad.Wx += dA2.T @ X.reshape(B * T, -1)
    grad.Wh += dA2.T @ Hprev.reshape(B * T, H)
    grad.Wc += dpeep
    grad.b += dA2.sum(axis=0)
    return (dA2 @ p.Wx).reshape(B, T, -1)


# --------------------------------------------------------------------------
# full network


def _as_batch(sequence):
    X = np.asarray(sequence, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] == 0:
        raise InvalidInput("expected a non-empty sequence of input vectors")
    return X


def _head(model, top):
    B, T, F = top.shape
    return (top.reshape(B * T, F) @ model.head_w).reshape(B, T) + model.head_b[0]


def blstm_forward(model, sequence):
    """Predictions for every position plus a cache for :func:`backward`.

    ``sequence`` is ``(T, D)`` (one sequence) or ``(B, T, D)``.  The returned
    predictions have shape ``(T,)`` or ``(B, T)`` to match.
    """
    single = np.ndim(sequence) == 2
    X = _as_batch(sequence)
    if X.shape[2] != model.dims[0]:
        raise InvalidInput(f"input dim {X.shape[2]} != model dim {model.dims[0]}")
    caches = []
    layer_in = X
    for k in (0, 2):
        hf, cf = _direction_forward(model.cells[k], layer_in, reverse=False)
        hb, cb = _direction_forward(model.cells[k + 1], layer_in, reverse=True)
        caches.append((cf, cb))
        layer_in = np.concatenate([hf, hb], axis=2)
    y = _head(model, layer_in)
    cache = {"caches": caches, "top": layer_in, "single": single, "shape": X.shape}
    return (y[0] if single else y), cache


def loss(predictions, targets):
    """Sum of squared residuals over positions, averaged over sequences."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise InvalidInput(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.ndim < 2:
        p, t = p.reshape(1, -1), t.reshape(1, -1)
    r = p - t
    return float((r * r).sum() / p.shape[0])


def backward(model, cache, targets, predictions=None):
    """Gradient of :func:`loss` with respect to every parameter.

    ``predictions`` may be passed to skip recomputing the head output.
    """
    top = cache["top"]
    B, T, _ = cache["shape"]
    if predictions is None:
        predictions = _head(model, top)
    y = np.asarray(predictions, dtype=np.float64).reshape(B, T)
    t = np.asarray(targets, dtype=np.float64).reshape(B, T)
    dy = 2.0 * (y - t) / B
    grad = model.zeros_like()
    grad.head_w += np.tensordot(dy, top, axes=([0, 1], [0, 1]))
    grad.head_b += dy.sum()
    dtop = dy[:, :, None] * model.head_w
    for layer in (1, 0):
        k = 2 * layer
        cf, cb = cache["caches"][layer]
        H = model.cells[k].hidden
        dx = _direction_backward(model.cells[k], cf, dtop[:, :, :H], grad.cells[k])
        dx += _direction_backward(model.cells[k + 1], cb, dtop[:, :, H:], grad.cells[k + 1])
        dtop = dx
    return grad


def global_norm(grads):
    return float(np.sqrt(sum(float((a * a).sum()) for a in grads.arrays())))


def clip_by_global_norm(grads, max_norm):
    """Scale ``grads`` in place so their global norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        s = max_norm / norm
        for a in grads.arrays():
            a *= s
    return norm


# --------------------------------------------------------------------------
# optimiser


@dataclass
class RmsPropState:
    acc: list
    rho: float = 0.9
    lr: float = 1e-3
    delta: float = 1e-8

    @classmethod
    def for_model(cls, model, rho=0.9, lr=1e-3, delta=1e-8):
        return cls([np.zeros_like(a) for a in model.arrays()], rho, lr, delta)


def rmsprop_step(params, grads, state):
    """In-place RMSProp update of ``params``; returns ``(params, state)``.

    ``params`` and ``grads`` are BlstmModel instances or plain lists of
    arrays with matching shapes.
    """
    ps = params.arrays() if hasattr(params, "arrays") else params
    gs = grads.arrays() if hasattr(grads, "arrays") else grads
    if len(ps) != len(gs) or len(ps) != len(state.acc):
        raise InvalidInput("parameter, gradient and accumulator lists differ")
    rho, lr, delta = state.rho, state.lr, state.delta
    for p, g, acc in zip(ps, gs, state.acc):
        acc *= rho
        acc += (1.0 - rho) * g * g
        p -= lr * g / np.sqrt(acc + delta)
    return params, state


# --------------------------------------------------------------------------
# checkpoints: <dir>/manifest.json + <dir>/params.f64


def save_checkpoint(path, model, *, seed=None, step=0, rmsprop=None, extra=None):
    """Write a checkpoint directory atomically."""
    manifest = {
        "version": model.version,
        "dims": list(model.dims),
        "seed": seed,
        "step": int(step),
        "rmsprop": rmsprop or {},
        "param_count": int(model.n_params),
        "param_order": "per cell [l1f, l1b, l2f, l2b], per gate i,f,c,o: Wx, Wh, Wc (i,f,o only), b; then head_w, head_b",
    }
    if extra:
        manifest.update(extra)
    path = os.path.abspath(path)
    parent = os.path.dirname(path)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".ckpt-", dir=parent)
    try:
        with open(os.path.join(tmp, "params.f64"), "wb") as fh:
            fh.write(model.to_bytes())
        with open(os.path.join(tmp, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        if os.path.isdir(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except OSError as e:
        shutil.rmtree(tmp, ignore_errors=True)
        raise StoreError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path):
    """Returns ``(model, manifest)``."""
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
        with open(os.path.join(path, "params.f64"), "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise StoreError(f"cannot read checkpoint {path}: {e}") from e
    if manifest.get("version") != VERSION:
        raise InvalidInput(f"unsupported checkpoint version {manifest.get('version')!r}")
    return BlstmModel.from_bytes(tuple(manifest["dims"]), blob), manifest
