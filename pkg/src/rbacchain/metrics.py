"""Block-confirmation lag, execution time and throughput over trace windows.

All times are milliseconds on input; lags and execution times are reported
in seconds per transaction and throughput in transactions per second.
A transaction belongs to the window ``(t_i, t_j]`` when its confirmation
time falls inside it; both numerator and denominator are filtered that way.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from . import errors

CSV_COLUMNS = (
    "tx_id",
    "kind",
    "exe_start_ms",
    "exe_done_ms",
    "confirmed_ms",
    "block_height",
    "cpu_us",
    "net_bytes",
)


@dataclass(frozen=True)
class TxTimeline:
    tx_id: str
    exe_start_ms: float
    exe_done_ms: float
    confirmed_ms: float
    block_height: int
    kind: str = ""
    cpu_us: int = 0
    net_bytes: int = 0

    def __post_init__(self) -> None:
        if not self.exe_start_ms <= self.exe_done_ms <= self.confirmed_ms:
            raise ValueError(
                f"{self.tx_id}: need start <= done <= confirmed, got "
                f"{self.exe_start_ms}, {self.exe_done_ms}, {self.confirmed_ms}"
            )


@dataclass
class MetricsWindow:
    t_i: float
    t_j: float
    peers: list[list[TxTimeline]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.t_j <= self.t_i:
            raise errors.DegenerateWindow(f"t_j={self.t_j} <= t_i={self.t_i}")
        if not self.peers:
            raise errors.InvalidScenario("a window needs at least one peer")

    @property
    def n_peers(self) -> int:
        return len(self.peers)

    def in_window(self, timeline: Sequence[TxTimeline]) -> list[TxTimeline]:
        return [t for t in timeline if self.t_i < t.confirmed_ms <= self.t_j]


def _block_last_done(timeline: Iterable[TxTimeline]) -> dict[int, float]:
    last: dict[int, float] = {}
    for t in timeline:
        last[t.block_height] = max(last.get(t.block_height, t.exe_done_ms), t.exe_done_ms)
    return last


def peer_bttt(window: MetricsWindow, timeline: Sequence[TxTimeline]) -> float:
    txs = window.in_window(timeline)
    if not txs:
        raise errors.EmptyWindow("no confirmed transactions in window")
    last = _block_last_done(timeline)
    lag = sum(t.confirmed_ms - last[t.block_height] for t in txs)
    return lag / len(txs) / 1000.0


def peer_cet(window: MetricsWindow, timeline: Sequence[TxTimeline]) -> float:
    txs = window.in_window(timeline)
    if not txs:
        raise errors.EmptyWindow("no confirmed transactions in window")
    return sum(t.exe_done_ms - t.exe_start_ms for t in txs) / len(txs) / 1000.0


def peer_throughput(window: MetricsWindow, timeline: Sequence[TxTimeline]) -> float:
    return len(window.in_window(timeline)) / ((window.t_j - window.t_i) / 1000.0)


def compute_bttt(window: MetricsWindow) -> float:
    """Mean over peers of the per-peer block-confirmation lag (s/tx)."""
    return sum(peer_bttt(window, tl) for tl in window.peers) / window.n_peers


def compute_cet(window: MetricsWindow) -> float:
    """Mean over peers of the per-peer contract execution time (s/tx)."""
    return sum(peer_cet(window, tl) for tl in window.peers) / window.n_peers


def compute_throughput(window: MetricsWindow) -> float:
    """Mean over peers of confirmed transactions per second."""
    return sum(peer_throughput(window, tl) for tl in window.peers) / window.n_peers


def timelines_from_records(records: Iterable, confirmed_at) -> list[TxTimeline]:
    """Convert engine :class:`~rbacchain.engine.TxRecord` rows.

    *confirmed_at* maps a block height to its confirmation time.
    """
    return [
        TxTimeline(
            r.tx_id,
            r.exe_start_ms,
            r.exe_done_ms,
            max(float(confirmed_at(r.block_height)), r.exe_done_ms),
            r.block_height,
            r.kind,
            r.cpu_us,
            r.net_bytes,
        )
        for r in records
    ]


def write_timeline_csv(timeline: Iterable[TxTimeline], out: IO[str]) -> None:
    w = csv.writer(out)
    w.writerow(CSV_COLUMNS)
    for t in timeline:
        w.writerow(
            [
                t.tx_id,
                t.kind,
                repr(float(t.exe_start_ms)),
                repr(float(t.exe_done_ms)),
                repr(float(t.confirmed_ms)),
                t.block_height,
                t.cpu_us,
                t.net_bytes,
            ]
        )


def read_timeline_csv(fh: IO[str]) -> list[TxTimeline]:
    return [
        TxTimeline(
            row["tx_id"],
            float(row["exe_start_ms"]),
            float(row["exe_done_ms"]),
            float(row["confirmed_ms"]),
            int(row["block_height"]),
            row["kind"],
            int(row["cpu_us"]),
            int(row["net_bytes"]),
        )
        for row in csv.DictReader(fh)
    ]
