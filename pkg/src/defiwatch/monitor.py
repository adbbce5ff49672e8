"""Profit-based attack monitoring over a transaction stream.

Every transaction is treated as a target t0.  Its cluster is all transactions
from the same sender within ``window_blocks`` blocks of t0 (0 means the same
block).  The sender's profit over the cluster is

    benefit = inflows to the sender (successful transactions only)
    cost    = outflows from the sender + gas paid on every member (reverted too)
    profit  = benefit - cost

with token amounts converted to wei through static rates.  A top-level
``value`` counts as an outflow only when the record has no native transfer
edge already describing it.
"""

from __future__ import annotations

from collections import Counter, deque
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field

from defiwatch.txmodel import (
    NATIVE,
    OutOfOrderInput,
    Transaction,
    UnknownAsset,
    Valuation,
    value_in_native,
)

PROFIT_THRESHOLD = "profit_threshold"
BURST = "burst"
INCONCLUSIVE = "inconclusive"
RULE_IDS = (PROFIT_THRESHOLD, BURST)


@dataclass(frozen=True)
class RuleConfig:
    threshold_wei: int = 0
    min_burst: int = 2
    window_blocks: int = 0
    rules: frozenset[str] = frozenset({PROFIT_THRESHOLD})

    def __post_init__(self) -> None:
        unknown = set(self.rules) - set(RULE_IDS)
        if unknown:
            raise ValueError(f"unknown rule ids: {sorted(unknown)}")
        if self.window_blocks < 0 or self.min_burst < 1:
            raise ValueError("window_blocks must be >= 0 and min_burst >= 1")


@dataclass(frozen=True)
class Cluster:
    target: Transaction
    members: tuple[Transaction, ...]
    sender: str

    @property
    def block_window(self) -> tuple[int, int]:
        blocks = [m.block_number for m in self.members]
        return (min(blocks), max(blocks))


@dataclass(frozen=True)
class ProfitLedger:
    benefit: int
    cost: int
    unvaluable: bool = False

    @property
    def profit(self) -> int:
        return self.benefit - self.cost


@dataclass(frozen=True)
class Alert:
    cluster: Cluster
    ledger: ProfitLedger
    rule: str
    threshold: int

    @property
    def sender(self) -> str:
        return self.cluster.sender

    @property
    def dumped_sequence(self) -> list[str]:
        return [m.hash for m in self.cluster.members]

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.sender, self.cluster.block_window[0], self.rule)

    def to_json(self) -> dict:
        low, high = self.cluster.block_window
        return {
            "rule": self.rule,
            "sender": self.sender,
            "block_window": [low, high],
            "profit_wei": str(self.ledger.profit),
            "threshold_wei": str(self.threshold),
            "txs": self.dumped_sequence,
        }


def cluster(t0: Transaction, pool: Iterable[Transaction], window_blocks: int = 0) -> Cluster:
    members = [
        t for t in pool
        if t.sender == t0.sender and abs(t.block_number - t0.block_number) <= window_blocks
    ]
    if t0 not in members:
        members.append(t0)
    members.sort(key=lambda t: t.position)
    return Cluster(t0, tuple(members), t0.sender)


def _has_native_edge(tx: Transaction) -> bool:
    return any(
        t.asset == NATIVE and t.sender == tx.sender and t.recipient == tx.to
        and t.amount == tx.value
        for t in tx.transfers
    )


def account_ledger(account: str, txs: Iterable[Transaction], valuation: Valuation,
                   coinbase: str | None = None) -> ProfitLedger:
    """Benefit and cost of ``account`` across ``txs``, whoever sent them.

    When ``coinbase`` is given, gas fees are credited to it, which closes the
    books over a block.
    """
    benefit = cost = 0
    unvaluable = False
    for tx in txs:
        if tx.sender == account:
            cost += tx.fee
        if coinbase is not None and account == coinbase:
            benefit += tx.fee
        if not tx.succeeded:
            continue
        if tx.value and not _has_native_edge(tx):
            if tx.sender == account:
                cost += tx.value
            if tx.to == account:
                benefit += tx.value
        for t in tx.transfers:
            if account not in (t.sender, t.recipient):
                continue
            try:
                amount = value_in_native(t, valuation)
            except UnknownAsset:
                unvaluable = True
                continue
            if t.recipient == account:
                benefit += amount
            if t.sender == account:
                cost += amount
    return ProfitLedger(benefit, cost, unvaluable)


def ledger(c: Cluster, v: Valuation) -> ProfitLedger:
    return account_ledger(c.sender, c.members, v)


def evaluate(c: Cluster, led: ProfitLedger, rules: RuleConfig) -> list[Alert]:
    if led.unvaluable:
        return [Alert(c, led, INCONCLUSIVE, rules.threshold_wei)]
    alerts = []
    if PROFIT_THRESHOLD in rules.rules and led.profit > rules.threshold_wei:
        alerts.append(Alert(c, led, PROFIT_THRESHOLD, rules.threshold_wei))
    if BURST in rules.rules and len(c.members) >= rules.min_burst:
        alerts.append(Alert(c, led, BURST, rules.threshold_wei))
    return alerts


@dataclass
class Monitor:
    """Incremental form of ``run_monitor``; feed transactions, then ``flush``.

    Targets in block b are evaluated once a transaction from a block beyond
    ``b + window_blocks`` arrives (or on flush), so their clusters are complete.
    """

    rules: RuleConfig
    valuation: Valuation = field(default_factory=Valuation)
    position: int = 0
    _last: tuple[int, int] | None = None
    _buffer: deque[Transaction] = field(default_factory=deque)
    _pending: deque[Transaction] = field(default_factory=deque)
    _emitted: set[tuple[str, int, str]] = field(default_factory=set)

    def feed(self, tx: Transaction) -> list[Alert]:
        if self._last is not None and tx.position <= self._last:
            raise OutOfOrderInput(self.position,
                                  f"{tx.position} does not follow {self._last}")
        self.position += 1
        self._last = tx.position
        alerts = self._drain(tx.block_number)
        self._buffer.append(tx)
        self._pending.append(tx)
        self._evict()
        return alerts

    def feed_all(self, txs: Iterable[Transaction]) -> list[Alert]:
        out: list[Alert] = []
        for tx in txs:
            out.extend(self.feed(tx))
        return out

    def flush(self) -> list[Alert]:
        return self._drain(None)

    def _drain(self, current_block: int | None) -> list[Alert]:
        w = self.rules.window_blocks
        out: list[Alert] = []
        while self._pending and (
                current_block is None
                or self._pending[0].block_number + w < current_block):
            t0 = self._pending.popleft()
            c = cluster(t0, self._buffer, w)
            for alert in evaluate(c, ledger(c, self.valuation), self.rules):
                if alert.key not in self._emitted:
                    self._emitted.add(alert.key)
                    out.append(alert)
        return out

    def _evict(self) -> None:
        w = self.rules.window_blocks
        oldest = self._pending[0].block_number if self._pending else self._last[0]  # type: ignore[index]
        while self._buffer and self._buffer[0].block_number < oldest - w:
            self._buffer.popleft()
        # Later clusters start no lower than this block, so older keys are dead.
        floor = oldest - w
        if len(self._emitted) > 1024:
            self._emitted = {k for k in self._emitted if k[1] >= floor}


def run_monitor(stream: Iterable[Transaction], rules: RuleConfig,
                valuation: Valuation | None = None) -> Iterator[Alert]:
    mon = Monitor(rules, valuation or Valuation())
    for tx in stream:
        yield from mon.feed(tx)
    yield from mon.flush()


def top_attackers(alerts: Sequence[Alert] | Sequence[dict], n: int) -> list[tuple[str, int]]:
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = Counter(a["sender"] if isinstance(a, dict) else a.sender for a in alerts)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
