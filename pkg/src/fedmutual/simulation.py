"""Round loop for the three strategies, plus output writing and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import nn
from .comm import CommLedger
from .config import SimulationConfig
from .data import (
    Dataset,
    generate_synthetic,
    load_csv,
    normalize,
    stratified_holdout,
    stratified_kfold,
)
from .nn import ModelParameters
from .protocols import (
    ClientReport,
    LayerKind,
    LayerPartition,
    Strategy,
    average_weights,
    default_boundary,
    evaluate_arrays,
    local_train,
    mutual_update,
    preprocess_weights,
    select_partition,
    uniform_average,
    update_weights,
)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ["round", "client", "train_loss", "fold_acc", "common_acc", "bce_term",
                   "kld_term", "bytes_sent", "bytes_received"]
CHECKPOINT_FORMAT = "fedmutual-checkpoint/1"


class SimulationError(RuntimeError):
    pass


@dataclass
class ClientRound:
    client: int
    train_loss: float
    epoch_losses: list[float]
    fold_acc: float
    common_acc: float
    bce_term: float
    kld_term: Optional[float]
    bytes_sent: int
    bytes_received: int
    mutual_trace: list[tuple[float, float, float]] = field(default_factory=list)


@dataclass
class RoundRecord:
    round: int
    event: str
    layer_boundary: Optional[int]
    clients: list[ClientRound]
    global_acc: Optional[float] = None
    global_loss: Optional[float] = None


@dataclass
class SimulationResult:
    config: SimulationConfig
    records: list[RoundRecord]
    ledger: CommLedger
    clients: list[ModelParameters]
    global_model: Optional[ModelParameters]
    final_metrics: list[tuple[str, float, float]]
    folds_consumed: int
    folds_left: int
    checkpoints: dict[int, list[ModelParameters]] = field(default_factory=dict)


def evaluate(params: ModelParameters, dataset: Dataset) -> tuple[float, float]:
    """Accuracy and BCE on an already-normalised dataset."""
    return evaluate_arrays(params, dataset.features, dataset.labels)


def _seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


# rng stream tags
_INIT, _GLOBAL, _LOCAL, _MUTUAL, _DATA, _TEST, _FOLDS = range(7)


def prepare_data(config: SimulationConfig) -> tuple[Dataset, Dataset]:
    """Training pool and held-out set, both normalised with training statistics."""
    d = config.data
    if d.source == "synthetic":
        train = generate_synthetic(d.n, d.dim, d.separation, _seed(config.seed, _DATA))
        test = generate_synthetic(d.test_n, d.dim, d.separation, _seed(config.seed, _TEST))
    else:
        train = load_csv(d.path)
        if d.test_path:
            test = load_csv(d.test_path)
        else:
            train, test = stratified_holdout(train, d.holdout_fraction, _seed(config.seed, _TEST))
    train, stats = normalize(train)
    return train, stats.apply(test)


def run_simulation(
    config: SimulationConfig,
    train: Optional[Dataset] = None,
    test: Optional[Dataset] = None,
    on_round: Optional[Callable[[RoundRecord, list[ModelParameters]], None]] = None,
) -> SimulationResult:
    """Run every round of ``config``; deterministic for a given seed.

    ``train``/``test`` override the configured data source (they are used
    as given, without normalisation). ``on_round`` sees each record and the
    post-synchronisation client models.
    """
    config.validate()
    if train is None or test is None:
        train, test = prepare_data(config)
    spec = config.strategy
    C, R = config.clients, config.rounds
    schedule = stratified_kfold(train, C, R, _seed(config.seed, _FOLDS))
    x, y = train.features, train.labels

    dims = [train.dim, *config.hidden, 1]
    n_layers = len(dims) - 1
    boundary = spec.boundary if spec.boundary is not None else default_boundary(n_layers)
    ledger = CommLedger()
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def fan_out(fn, items):
        return list(pool.map(fn, items)) if pool else [fn(it) for it in items]

    def checked(fn, round_index, client):
        try:
            return fn()
        except FloatingPointError as exc:
            raise SimulationError(f"round {round_index}, client {client}: {exc}") from None

    def pop(round_index):
        if len(schedule) == 0:
            raise SimulationError(
                f"fold schedule exhausted in round {round_index} after "
                f"{schedule.consumed_count} folds"
            )
        return schedule.pop()

    g = nn.init_params(dims, config.dropout, rng=_rng(config.seed, _INIT))
    f0 = pop(-1)
    g, g_report = checked(
        lambda: local_train(g, x[f0], y[f0], spec.local_epochs, spec.lr,
                            _rng(config.seed, _GLOBAL, 0), spec.batch_size), -1, "global")
    clients = [g.copy() for _ in range(C)]
    n_params = g.count()
    for c in range(C):
        ledger.record(-1, c, [], [("full_weights", n_params)])
    keep_global = spec.kind is not Strategy.DML
    if not keep_global:
        g = None

    records: list[RoundRecord] = []
    checkpoints: dict[int, list[ModelParameters]] = {}
    try:
        for i in range(R):
            folds = [pop(i) for _ in range(C)]

            def train_one(c, i=i, folds=folds, clients=clients):
                f = folds[c]
                return checked(lambda: local_train(
                    clients[c], x[f], y[f], spec.local_epochs, spec.lr,
                    _rng(config.seed, _LOCAL, i, c), spec.batch_size), i, c)

            trained = fan_out(train_one, range(C))
            local = [p for p, _ in trained]
            reports: list[ClientReport] = [r for _, r in trained]
            server = pop(i)
            xs, ys = x[server], y[server]
            kld_terms: list[Optional[float]] = [None] * C
            traces: list[list] = [[] for _ in range(C)]

            if spec.kind is Strategy.DML:
                event, layer_boundary = "mutual_exchange", None
                bce_terms = [0.0] * C
                shared = [nn.predict(p, xs) for p in local]

                def mutual_one(c, i=i, local=local, shared=shared):
                    peers = [q for j, q in enumerate(shared) if j != c]
                    return checked(lambda: mutual_update(
                        local[c], xs, ys, peers, spec, _rng(config.seed, _MUTUAL, i, c)), i, c)

                updated = fan_out(mutual_one, range(C))
                clients = [p for p, _ in updated]
                for c, (_, trace) in enumerate(updated):
                    traces[c] = trace
                    _, bce_terms[c], kld_terms[c] = trace[0]
                    ledger.record(i, c, [("predictions", ys.size)], [("predictions", C * ys.size)])
            else:
                bce_terms = [evaluate_arrays(p, xs, ys)[1] for p in local]
                if spec.kind is Strategy.VANILLA:
                    partition = LayerPartition(LayerKind.DEEP, boundary)
                    avg = uniform_average(local)
                    g = avg.copy()
                    clients = [avg.copy() for _ in range(C)]
                    extra = []
                else:
                    kind = select_partition(i, spec.delta, spec.warmup)
                    partition = LayerPartition(kind, boundary)
                    avg = average_weights(preprocess_weights(local, reports))
                    g = update_weights(g, avg, partition)
                    clients = [update_weights(p, avg, partition) for p in local]
                    extra = [("metrics", 0)]
                layer_boundary = partition.shared_layers(n_layers)
                event = f"{partition.kind.value}_share"
                msg = "full_weights" if partition.kind is LayerKind.DEEP else "shallow_weights"
                size = g.count(layer_boundary)
                for c in range(C):
                    ledger.record(i, c, [(msg, size)] + extra, [(msg, size)])
                g, g_report = checked(
                    lambda: local_train(g, xs, ys, spec.local_epochs, spec.lr,
                                        _rng(config.seed, _GLOBAL, i + 1), spec.batch_size),
                    i, "global")

            rows = []
            for c in range(C):
                entry = ledger.lookup(i, c)
                loss = reports[c].epoch_losses[-1]
                if not np.isfinite(loss):
                    raise SimulationError(f"round {i}, client {c}: non-finite training loss")
                rows.append(ClientRound(
                    client=c, train_loss=loss, epoch_losses=reports[c].epoch_losses,
                    fold_acc=reports[c].accuracy, common_acc=evaluate_arrays(clients[c], xs, ys)[0],
                    bce_term=bce_terms[c], kld_term=kld_terms[c],
                    bytes_sent=entry.bytes_sent, bytes_received=entry.bytes_received,
                    mutual_trace=traces[c],
                ))
            record = RoundRecord(i, event, layer_boundary, rows)
            if g is not None:
                record.global_acc, record.global_loss = g_report.accuracy, g_report.loss
            records.append(record)
            log.info("round %d: %s, mean fold acc %.4f", i, event,
                     np.mean([r.fold_acc for r in rows]))
            if config.checkpoint_every and (i + 1) % config.checkpoint_every == 0:
                checkpoints[i] = [p.copy() for p in clients]
            if on_round is not None:
                on_round(record, clients)
    finally:
        if pool:
            pool.shutdown()

    final = [(f"client{c}", *evaluate(p, test)) for c, p in enumerate(clients)]
    if g is not None:
        final.append(("global", *evaluate(g, test)))
    return SimulationResult(config, records, ledger, clients, g, final,
                            schedule.consumed_count, len(schedule), checkpoints)


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def save_checkpoint(models: Sequence[tuple[str, ModelParameters]], path: Union[str, Path]) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "models": [
            {
                "name": name,
                "dropout": list(p.dropout),
                "layers": [
                    {"index": k, "weights": w.tolist(), "biases": b.tolist()}
                    for k, (w, b) in enumerate(zip(p.weights, p.biases))
                ],
            }
            for name, p in models
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: Union[str, Path]) -> dict[str, ModelParameters]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    out = {}
    for m in doc["models"]:
        layers = sorted(m["layers"], key=lambda layer: layer["index"])
        out[m["name"]] = ModelParameters(
            [np.array(layer["weights"], dtype=float) for layer in layers],
            [np.array(layer["biases"], dtype=float) for layer in layers],
            tuple(m["dropout"]),
        )
    return out


def write_outputs(result: SimulationResult, directory: Union[str, Path]) -> Path:
    """Write history, events, comm ledger, resolved config and final metrics."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    with (out / "history.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for rec in result.records:
            for c in rec.clients:
                w.writerow([rec.round, c.client, _num(c.train_loss), _num(c.fold_acc),
                            _num(c.common_acc), _num(c.bce_term), _num(c.kld_term),
                            c.bytes_sent, c.bytes_received])

    with (out / "events.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for rec in result.records:
            event = {"round": rec.round, "kind": rec.event}
            if rec.layer_boundary is not None:
                event["layer_boundary"] = rec.layer_boundary
            fh.write(json.dumps(event) + "\n")

    result.ledger.write_csv(out / "comm.csv")
    (out / "config_resolved.ini").write_text(result.config.to_ini(), encoding="utf-8")

    with (out / "final_metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "heldout_acc", "heldout_loss"])
        for name, acc, loss in result.final_metrics:
            w.writerow([name, _num(acc), _num(loss)])

    if result.global_model is not None:
        with (out / "global_history.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "global_acc", "global_loss"])
            for rec in result.records:
                w.writerow([rec.round, _num(rec.global_acc), _num(rec.global_loss)])

    if result.config.verbose:
        with (out / "epochs.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "client", "phase", "epoch", "loss", "bce", "kld"])
            for rec in result.records:
                for c in rec.clients:
                    for e, loss in enumerate(c.epoch_losses):
                        w.writerow([rec.round, c.client, "local", e, _num(loss), _num(loss), ""])
                    for e, (tot, bce, kld) in enumerate(c.mutual_trace):
                        w.writerow([rec.round, c.client, "mutual", e, _num(tot), _num(bce), _num(kld)])

    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    models = [(f"client{c}", p) for c, p in enumerate(result.clients)]
    if result.global_model is not None:
        models.append(("global", result.global_model))
    save_checkpoint(models, ckpt / "final.json")
    for i, snapshot in result.checkpoints.items():
        save_checkpoint([(f"client{c}", p) for c, p in enumerate(snapshot)], ckpt / f"round_{i:03d}.json")
    return out
