"""How the dataset is cut into the per-round fold budget.

Five clients and twelve rounds need (1 + 5) * 12 + 1 = 73 folds: one to
pre-train the starting model, then per round one per client plus one for
the server (global retrain, or the shared common set under mutual learning).
"""
import numpy as np

from fedmutual.data import fold_count, generate_synthetic, stratified_kfold

ds = generate_synthetic(6100, 2, 2.0, seed=0)
sched = stratified_kfold(ds, clients=5, rounds=12, seed=0)
print("folds:", len(sched), "expected:", fold_count(5, 12))
sizes = [f.size for f in sched.folds]
ones = [int(ds.labels[f].sum()) for f in sched.folds]
print("fold size:", set(sizes), "positives per fold:", set(ones))
print("discarded remainder:", sched.remainder.size)

first = sched.pop()
print("first fold (global pre-training):", first[:8], "...")
print("remaining:", len(sched), "consumed:", sched.consumed_count)
