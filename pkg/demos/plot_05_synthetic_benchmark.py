"""
A small synthetic city, end to end
==================================

Generate a city, hold out a fifth of the houses, train on walks over the
rest and compare with LASSO and the global mean.  This uses a smaller city
and shorter training than ``geowalk bench`` so it runs in well under a
minute.
"""

from geowalk.pipeline import (TrainConfig, confidence_groups, evaluate, global_mean_baseline,
                              lasso_baseline, predict, split, train)
from geowalk.synth import SynthConfig, generate

houses, truth = generate(SynthConfig(n_houses=600, seed=3))
train_houses, test_houses = split(houses, 0.8, seed=3)
print(len(train_houses), "training houses,", len(test_houses), "held out")

###############################################################################
# Train a small network.

cfg = TrainConfig(num_sequences=8000, batch_size=128, max_steps=600, hidden1=32, hidden2=16,
                  lr=3e-3, per_test=50, seed=3)
trained = train(train_houses, cfg)
print("steps", trained.steps, "final loss", round(trained.log[-1][1], 3))

###############################################################################
# Predict each held-out house from its own walks and score.

summaries = predict(trained, train_houses, test_houses, cfg.per_test, cfg)
ours = evaluate(summaries, "average")
_, las = lasso_baseline(train_houses, test_houses, seed=3)
gm = global_mean_baseline(train_houses, test_houses)
print(f"B-LSTM average  MAPE {ours.mape_percent:5.2f}%")
print(f"LASSO           MAPE {las.mape_percent:5.2f}%")
print(f"global mean     MAPE {gm.mape_percent:5.2f}%")

###############################################################################
# Houses whose walks agree are predicted better.

for k, (m, s) in enumerate(confidence_groups(summaries), 1):
    print(f"group {k}: mean std {s:6.2f}  MAE {m.mae:6.2f}")
