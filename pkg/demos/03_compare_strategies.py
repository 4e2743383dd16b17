"""Run the three strategies side by side and compare accuracy and traffic.

Mirrors the per-client accuracy table: vanilla clients end identical,
async clients differ only in their unshared layers, mutual-learning
clients never exchange weights.
"""
import numpy as np

from fedmutual import SimulationConfig, Strategy, StrategySpec, run_simulation
from fedmutual.config import DataSource

rows = []
for kind in Strategy:
    cfg = SimulationConfig(clients=5, rounds=12, strategy=StrategySpec(kind=kind),
                           data=DataSource(separation=2.0), seed=0)
    res = run_simulation(cfg)
    accs = [acc for name, acc, _ in res.final_metrics if name.startswith("client")]
    per_round = [e for e in res.ledger.entries if e.round >= 0]
    rows.append((kind.value, accs, res.ledger.total_sent, np.mean([e.bytes_sent for e in per_round])))

print(f"{'strategy':10s} " + " ".join(f"client{c}" for c in range(5)) + "   uplink total  mean/client-round")
for name, accs, total, mean in rows:
    print(f"{name:10s} " + " ".join(f"{100 * a:7.2f}" for a in accs) + f"   {total:12d}  {mean:10.0f}")
