"""Linear two-view simulation: train, rank features, retrain on the top 20.

Run ``python demos/linear_study.py [seed]``. Takes a few seconds.
"""

import sys

import numpy as np

from deepida import trainer
from deepida.ranking import rank_features, select_and_retrain
from deepida.simgen import LinearSimSpec, gen_linear, train_valid_test_split

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

# 180 samples per class, 60 of them for training; features 1-20 of each view carry signal
data = gen_linear(LinearSimSpec(p=(100, 100), n_per_class=180, seed=seed))
train, _, test = train_valid_test_split(data, (1 / 3, 0, 2 / 3), seed=seed)
cfg = trainer.TrainConfig(seed=seed)

full = trainer.fit(train, [trainer.default_layer_specs(p) for p in train.n_features], cfg)
print("all features, test accuracy:", {k: round(v, 3) for k, v in trainer.evaluate(full, test).items()})

report = rank_features(train, M=20, cfg=cfg, seed=seed)
for d in range(train.n_views):
    top = report.top(d, 20)
    print(f"view {d + 1}: {int(np.sum(top < 20))}/20 planted signals in the top 20 ->", (top + 1).tolist())

model = select_and_retrain(train, report, 20, cfg=cfg)
print("top-20 features, test accuracy:", {k: round(v, 3) for k, v in trainer.evaluate(model, test).items()})
