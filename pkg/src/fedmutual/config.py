"""INI-style simulation config: sections [run], [data], [model], [strategy].

Required keys are ``run.clients``, ``run.rounds``, ``strategy.kind`` and
``data.source``; everything else has a default (see ``DEFAULTS``).
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .protocols import Strategy, StrategySpec


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config:\n  " + "\n  ".join(problems))


DEFAULTS = {
    "run": {"seed": "0", "out": "runs/out", "workers": "1", "verbose": "false",
            "checkpoint_every": "0"},
    "data": {"path": "", "test_path": "", "holdout_fraction": "0.2", "n": "6100", "dim": "2",
             "separation": "2.0", "test_n": "2000"},
    "model": {"hidden": "32,16", "dropout": "0.2,0.2"},
    "strategy": {"delta": "3", "warmup": "5", "local_epochs": "5", "mutual_epochs": "5",
                 "lr": "0.05", "batch_size": "32", "kl_direction": "paper",
                 "kl_coefficient": "1.0", "boundary": ""},
}
REQUIRED = {"run": ("clients", "rounds"), "strategy": ("kind",), "data": ("source",)}


@dataclass
class DataSource:
    source: str = "synthetic"
    path: str = ""
    test_path: str = ""
    holdout_fraction: float = 0.2
    n: int = 6100
    dim: int = 2
    separation: float = 2.0
    test_n: int = 2000


@dataclass
class SimulationConfig:
    clients: int
    rounds: int
    strategy: StrategySpec = field(default_factory=StrategySpec)
    data: DataSource = field(default_factory=DataSource)
    hidden: tuple[int, ...] = (32, 16)
    dropout: tuple[float, ...] = (0.2, 0.2)
    seed: int = 0
    out: str = "runs/out"
    workers: int = 1
    verbose: bool = False
    checkpoint_every: int = 0

    def problems(self) -> list[str]:
        out = []
        if self.clients < 2:
            out.append(f"run.clients must be >= 2, got {self.clients}")
        if self.rounds < 1:
            out.append(f"run.rounds must be >= 1, got {self.rounds}")
        if self.workers < 1:
            out.append(f"run.workers must be >= 1, got {self.workers}")
        if self.checkpoint_every < 0:
            out.append(f"run.checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if len(self.dropout) != len(self.hidden):
            out.append(f"model.dropout needs {len(self.hidden)} rates, got {len(self.dropout)}")
        if any(h < 1 for h in self.hidden):
            out.append(f"model.hidden sizes must be >= 1, got {self.hidden}")
        if any(not 0 <= r < 1 for r in self.dropout):
            out.append(f"model.dropout rates must lie in [0, 1), got {self.dropout}")
        n_layers = len(self.hidden) + 1
        if self.strategy.boundary is not None and self.strategy.boundary >= n_layers:
            out.append(f"strategy.boundary must be < {n_layers} layers, got {self.strategy.boundary}")
        out += [f"strategy.{p}" for p in self.strategy.problems()]
        d = self.data
        if d.source not in ("synthetic", "csv"):
            out.append(f"data.source must be 'synthetic' or 'csv', got {d.source!r}")
        elif d.source == "csv":
            if not d.path:
                out.append("data.path is required when data.source = csv")
            elif not Path(d.path).is_file():
                out.append(f"data.path {d.path!r} does not exist")
            if d.test_path and not Path(d.test_path).is_file():
                out.append(f"data.test_path {d.test_path!r} does not exist")
            if not d.test_path and not 0 < d.holdout_fraction < 1:
                out.append(f"data.holdout_fraction must lie in (0, 1), got {d.holdout_fraction}")
        else:
            if d.n < 2 or d.n % 2:
                out.append(f"data.n must be a positive even number, got {d.n}")
            if d.test_n < 2 or d.test_n % 2:
                out.append(f"data.test_n must be a positive even number, got {d.test_n}")
            if d.dim < 2:
                out.append(f"data.dim must be >= 2, got {d.dim}")
            if d.separation < 0:
                out.append(f"data.separation must be >= 0, got {d.separation}")
        return out

    def validate(self) -> "SimulationConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_ini(self) -> str:
        """Every key, defaults included, in the same format ``load_config`` reads."""
        s = self.strategy
        d = self.data
        sections = {
            "run": {"clients": self.clients, "rounds": self.rounds, "seed": self.seed,
                    "out": self.out, "workers": self.workers,
                    "verbose": str(self.verbose).lower(), "checkpoint_every": self.checkpoint_every},
            "data": {"source": d.source, "path": d.path, "test_path": d.test_path,
                     "holdout_fraction": d.holdout_fraction, "n": d.n, "dim": d.dim,
                     "separation": d.separation, "test_n": d.test_n},
            "model": {"hidden": ",".join(map(str, self.hidden)),
                      "dropout": ",".join(map(str, self.dropout))},
            "strategy": {"kind": s.kind.value, "delta": s.delta, "warmup": s.warmup,
                         "local_epochs": s.local_epochs, "mutual_epochs": s.mutual_epochs,
                         "lr": s.lr, "batch_size": s.batch_size, "kl_direction": s.kl_direction,
                         "kl_coefficient": s.kl_coefficient,
                         "boundary": "" if s.boundary is None else s.boundary},
        }
        lines = []
        for name, values in sections.items():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in values.items()]
            lines.append("")
        return "\n".join(lines)


def _parse(problems: list[str], key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return kind(raw.strip())
    except ValueError:
        problems.append(f"{key}: cannot parse {raw!r}")
        return None


def parse_config(text: str, overrides: Optional[dict] = None) -> SimulationConfig:
    """Build a validated config from INI text; every bad field is reported at once."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from None
    problems: list[str] = []
    raw: dict[str, dict[str, str]] = {}
    for section, defaults in DEFAULTS.items():
        raw[section] = dict(defaults)
        if cp.has_section(section):
            for key, value in cp.items(section):
                if key not in defaults and key not in REQUIRED.get(section, ()):
                    problems.append(f"{section}.{key}: unknown key")
                raw[section][key] = value
    for section in cp.sections():
        if section not in DEFAULTS:
            problems.append(f"[{section}]: unknown section")
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            raw[section][key] = str(value)
    for section, keys in REQUIRED.items():
        for key in keys:
            if not raw[section].get(key, "").strip():
                problems.append(f"{section}.{key}: required")
    if problems:
        raise ConfigError(problems)

    r, d, m, s = raw["run"], raw["data"], raw["model"], raw["strategy"]
    get = lambda sec, vals, key, kind: _parse(problems, f"{sec}.{key}", vals[key], kind)  # noqa: E731
    kind = None
    try:
        kind = Strategy.parse(s["kind"])
    except ValueError as exc:
        problems.append(f"strategy.kind: {exc}")
    spec_vals = dict(
        delta=get("strategy", s, "delta", int), warmup=get("strategy", s, "warmup", int),
        local_epochs=get("strategy", s, "local_epochs", int),
        mutual_epochs=get("strategy", s, "mutual_epochs", int),
        lr=get("strategy", s, "lr", float), batch_size=get("strategy", s, "batch_size", int),
        kl_direction=s["kl_direction"].strip(),
        kl_coefficient=get("strategy", s, "kl_coefficient", float),
        boundary=get("strategy", s, "boundary", int) if s["boundary"].strip() else None,
    )
    data_vals = dict(
        source=d["source"].strip().lower(), path=d["path"].strip(), test_path=d["test_path"].strip(),
        holdout_fraction=get("data", d, "holdout_fraction", float), n=get("data", d, "n", int),
        dim=get("data", d, "dim", int), separation=get("data", d, "separation", float),
        test_n=get("data", d, "test_n", int),
    )
    top = dict(
        clients=get("run", r, "clients", int), rounds=get("run", r, "rounds", int),
        seed=get("run", r, "seed", int), out=r["out"].strip(), workers=get("run", r, "workers", int),
        verbose=get("run", r, "verbose", bool),
        checkpoint_every=get("run", r, "checkpoint_every", int),
        hidden=get("model", m, "hidden", "ints"), dropout=get("model", m, "dropout", "floats"),
    )
    if problems:
        raise ConfigError(problems)
    cfg = SimulationConfig(
        strategy=StrategySpec(kind=kind, **spec_vals), data=DataSource(**data_vals), **top
    )
    return cfg.validate()


def load_config(path: Union[str, Path], overrides: Optional[dict] = None) -> SimulationConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file {str(path)!r} not found"])
    return parse_config(path.read_text(encoding="utf-8"), overrides)
