"""Per-round training loss with shaded synchronisation events.

Light shading marks shallow-weight rounds, dark shading deep (full) rounds,
and hatched rounds the prediction exchange of mutual learning. Writes
``training_history.png`` next to the current directory; needs matplotlib.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from fedmutual import SimulationConfig, Strategy, StrategySpec, run_simulation  # noqa: E402
from fedmutual.config import DataSource  # noqa: E402

SHADE = {"shallow_share": ("tab:blue", 0.12, None), "deep_share": ("tab:blue", 0.35, None),
         "mutual_exchange": ("tab:orange", 0.2, "//")}

fig, axes = plt.subplots(3, 1, figsize=(9, 9), sharex=True)
for ax, kind in zip(axes, Strategy):
    cfg = SimulationConfig(5, 12, StrategySpec(kind=kind), DataSource(separation=2.0), seed=0)
    res = run_simulation(cfg)
    for rec in res.records:
        color, alpha, hatch = SHADE[rec.event]
        ax.axvspan(rec.round + 0.5, rec.round + 1.0, color=color, alpha=alpha, hatch=hatch, lw=0)
    for c in range(cfg.clients):
        curve = np.concatenate([
            np.array(rec.clients[c].epoch_losses) for rec in res.records])
        xs = np.concatenate([rec.round + np.linspace(0, 0.5, len(rec.clients[c].epoch_losses))
                             for rec in res.records])
        (line,) = ax.plot(xs, curve, lw=1, label=f"client {c}")
        if kind is Strategy.DML:
            mutual = [rec.clients[c].mutual_trace for rec in res.records]
            mx = np.concatenate([rec.round + 0.5 + np.linspace(0, 0.5, len(m))
                                 for rec, m in zip(res.records, mutual)])
            ax.plot(mx, np.concatenate([[t[0] for t in m] for m in mutual]), lw=1, ls=":", color=line.get_color())
    ax.set_title(kind.value)
    ax.set_ylabel("loss")
axes[0].legend(ncol=5, fontsize=7)
axes[-1].set_xlabel("round")
fig.tight_layout()
fig.savefig("training_history.png", dpi=120)
print("wrote training_history.png")
