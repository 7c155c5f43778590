"""
The bidirectional LSTM and its gradients
========================================

Two stacked bidirectional layers with peephole cells, a linear head on every
position, trained with RMSProp.  The gradients are checked here against
central differences.
"""

import numpy as np

from geowalk import net

###############################################################################
# A tiny model: 3 input features, 4 and 3 hidden units.

model = net.init_model((3, 4, 3), seed=0)
model.head_w[:] = np.random.default_rng(1).normal(size=model.head_w.shape)
print(model.n_params, "parameters")

r = np.random.default_rng(2)
X, Y = r.normal(size=(2, 5, 3)), r.normal(size=(2, 5))
pred, cache = net.blstm_forward(model, X)
print("loss", net.loss(pred, Y))

###############################################################################
# Compare a handful of analytic gradients with finite differences.

grads = net.backward(model, cache, Y)
for name, p, g in [("layer-1 forward Wx", model.cells[0].Wx, grads.cells[0].Wx),
                   ("layer-2 backward peepholes", model.cells[3].Wc, grads.cells[3].Wc),
                   ("head bias", model.head_b, grads.head_b)]:
    idx = (0,) * p.ndim
    old = p[idx]
    p[idx] = old + 1e-5
    up = net.loss(net.blstm_forward(model, X)[0], Y)
    p[idx] = old - 1e-5
    down = net.loss(net.blstm_forward(model, X)[0], Y)
    p[idx] = old
    print(f"{name:28s} analytic {g[idx]: .8f}  numeric {(up - down) / 2e-5: .8f}")

###############################################################################
# A few hundred RMSProp steps fit a fixed batch.

opt = net.RmsPropState.for_model(model, lr=1e-2)
for step in range(301):
    pred, cache = net.blstm_forward(model, X)
    if step % 100 == 0:
        print(step, round(net.loss(pred, Y), 5))
    g = net.backward(model, cache, Y, pred)
    net.clip_by_global_norm(g, 5.0)
    net.rmsprop_step(model, g, opt)
