"""Byte accounting for client/server messages (32-bit floats throughout)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

BYTES_PER_VALUE = 4
MESSAGE_KINDS = ("full_weights", "shallow_weights", "predictions", "metrics")


def account_communication(kind: str, payload_size: int = 0) -> int:
    """Bytes on the wire for one message.

    ``payload_size`` is a parameter count for weight messages and a row
    count for prediction messages; metrics messages are always two floats.
    """
    if kind not in MESSAGE_KINDS:
        raise ValueError(f"unknown message kind {kind!r}")
    if payload_size < 0:
        raise ValueError(f"payload size must be non-negative, got {payload_size}")
    if kind == "metrics":
        return 2 * BYTES_PER_VALUE
    return payload_size * BYTES_PER_VALUE


@dataclass
class CommEntry:
    round: int
    client: int
    sent_kind: str
    bytes_sent: int
    received_kind: str
    bytes_received: int


@dataclass
class CommLedger:
    entries: list[CommEntry] = field(default_factory=list)

    def record(self, round_index: int, client: int, sent: list[tuple[str, int]],
               received: list[tuple[str, int]]) -> CommEntry:
        entry = CommEntry(
            round_index,
            client,
            "+".join(k for k, _ in sent),
            sum(account_communication(k, n) for k, n in sent),
            "+".join(k for k, _ in received),
            sum(account_communication(k, n) for k, n in received),
        )
        self.entries.append(entry)
        return entry

    def lookup(self, round_index: int, client: int) -> CommEntry:
        for e in self.entries:
            if e.round == round_index and e.client == client:
                return e
        raise KeyError((round_index, client))

    @property
    def total_sent(self) -> int:
        return sum(e.bytes_sent for e in self.entries)

    @property
    def total_received(self) -> int:
        return sum(e.bytes_received for e in self.entries)

    def write_csv(self, path: Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "client", "sent_kind", "bytes_sent", "received_kind", "bytes_received"])
            for e in self.entries:
                w.writerow([e.round, e.client, e.sent_kind, e.bytes_sent, e.received_kind, e.bytes_received])
            w.writerow(["total", "all", "", self.total_sent, "", self.total_received])
