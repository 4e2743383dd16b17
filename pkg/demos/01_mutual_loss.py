"""The composite loss each client minimises during the mutual phase.

Run with ``python demos/01_mutual_loss.py``.
"""
import numpy as np

from fedmutual import nn

# %% KL between two binary distributions, in nats
print("KL((0.8,0.2) || (0.5,0.5)) =", nn.kl_divergence((0.8, 0.2), (0.5, 0.5)))

# %% averaged over peers: client i holds 0.6, peers hold 0.5 and 0.7
own = np.array([0.6])
peers = [np.array([0.5]), np.array([0.7])]
print("paper direction  :", nn.kld_avg(own, peers))
print("reverse direction:", nn.kld_avg(own, peers, direction="reverse"))

# %% model loss + KL term, and a gradient check on a small two-hidden-layer net
rng = np.random.default_rng(0)
params = nn.init_params([4, 16, 8, 1], (0.2, 0.2), rng=rng)
x = rng.normal(size=(32, 4))
y = rng.integers(0, 2, 32)
spec = nn.LossSpec("bce+kld", [rng.uniform(0.1, 0.9, 32) for _ in range(3)])
total, bce, kld = nn.loss_terms(nn.predict(params, x), y, spec)
print(f"loss = {bce:.4f} (BCE) + {kld:.4f} (KLD) = {total:.4f}")
err = nn.finite_difference_check(params, x, y, spec, rng=np.random.default_rng(1))
print(f"max relative gradient error vs central differences: {err:.2e}")
