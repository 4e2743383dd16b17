import pytest

from fedmutual.config import DataSource, SimulationConfig
from fedmutual.protocols import Strategy, StrategySpec

ACCEPTANCE_LINES: list[str] = []


def small_config(kind="dml", seed=0, clients=3, rounds=4, **strategy):
    return SimulationConfig(
        clients=clients,
        rounds=rounds,
        strategy=StrategySpec(kind=Strategy.parse(kind), local_epochs=2, mutual_epochs=2, **strategy),
        data=DataSource(n=800, dim=2, separation=3.0, test_n=200),
        hidden=(8, 4),
        dropout=(0.2, 0.2),
        seed=seed,
    )


@pytest.fixture
def make_config():
    return small_config


@pytest.fixture
def acceptance_report():
    def report(number: int, title: str, ok: bool, detail: str = "") -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
                                + (f" ({detail})" if detail else ""))
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
