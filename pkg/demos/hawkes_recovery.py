"""Fit the neural point process to a small Hawkes sample and read off who excites whom.

Uses a smaller sample and shorter training than the desk configuration so it
finishes in a couple of minutes on one core.
"""
import numpy as np

from eventgc import generators, npp, seqdata
from eventgc.causality import batched_statistic
from eventgc.evaluation import evaluate, poisson_nll

# %% Sample 80 sequences from the desk Hawkes configuration.
cfg, data = generators.generate("excitation", "desk", seed=0)
data = data.subset(np.arange(80))
print(f"{len(data)} sequences, {data.num_events()} events, K={data.K}")
print("ground truth (row = effect, column = cause):")
print(np.round(data.ground_truth, 2))

# %% Hold out one fold and train.
train_idx, test_idx = seqdata.kfold_split(data, 5, 0)[0]
train, test = data.subset(train_idx), data.subset(test_idx)
model = npp.NppModel.for_dataset(train, d_emb=32, hidden=32, rng=0)
best, hist = npp.train(model, train, npp.TrainConfig(epochs=60, lr=2e-3, batch_size=16))
print(f"best epoch {hist.best_epoch}, validation objective {min(hist.valid_loss):.3f}")

# %% Attribute and score.
res = batched_statistic(best, train, batch_size=16, ig_steps=50)
print("estimated Y:")
print(np.round(res.Y, 2))
report = evaluate(res.Y, data.ground_truth, best, test)
print(f"AUC {report.auc:.3f}  tau {report.kendall_tau:.3f}")
print(f"hold-out NLL per event: model {report.holdout_nll_per_event:.3f}, "
      f"Poisson {poisson_nll(train, test):.3f}, "
      f"true process {generators.exact_nll(cfg, test) / test.num_events():.3f}")
