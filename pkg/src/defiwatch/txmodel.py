"""Monitored transactions, asset transfers and the JSONL fixture codec."""

from __future__ import annotations

import gzip
import io
import json
import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TextIO

NATIVE = "native"
SUCCESS = "success"
REVERTED = "reverted"

UINT256_MAX = 2**256 - 1

_ADDRESS = re.compile(r"^0x[0-9a-f]{40}$")
_HASH = re.compile(r"^0x[0-9a-f]{64}$")


class SchemaError(ValueError):
    def __init__(self, field_name: str, message: str = "invalid"):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DatasetError(ValueError):
    pass


class OutOfOrderInput(ValueError):
    """Stream not strictly ordered by (block_number, tx_index) at ``position``."""

    def __init__(self, position: int, message: str = ""):
        super().__init__(f"out-of-order input at position {position}" +
                         (f": {message}" if message else ""))
        self.position = position


class UnknownAsset(KeyError):
    def __init__(self, address: str):
        super().__init__(address)
        self.address = address


@dataclass(frozen=True)
class Transfer:
    asset: str
    sender: str
    recipient: str
    amount: int

    def __post_init__(self) -> None:
        if self.amount <= 0:
            raise SchemaError("amount", "must be positive")
        if self.sender == self.recipient:
            raise SchemaError("to", "transfer to self")


@dataclass(frozen=True)
class Transaction:
    hash: str
    block_number: int
    tx_index: int
    sender: str
    to: str | None
    value: int = 0
    gas_used: int = 0
    gas_price: int = 0
    status: str = SUCCESS
    transfers: tuple[Transfer, ...] = ()

    @property
    def position(self) -> tuple[int, int]:
        return (self.block_number, self.tx_index)

    @property
    def succeeded(self) -> bool:
        return self.status == SUCCESS

    @property
    def fee(self) -> int:
        return self.gas_used * self.gas_price


@dataclass(frozen=True)
class Valuation:
    """Static exchange rates: wei of native currency per token base unit."""

    rates: Mapping[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for token, (num, den) in self.rates.items():
            if den <= 0 or num < 0:
                raise ValueError(f"bad rate for {token}: {num}/{den}")


def value_in_native(t: Transfer, v: Valuation) -> int:
    if t.asset == NATIVE:
        return t.amount
    rate = v.rates.get(t.asset)
    if rate is None:
        raise UnknownAsset(t.asset)
    num, den = rate
    return t.amount * num // den


def _address(raw: Any, name: str, optional: bool = False) -> str | None:
    if raw is None and optional:
        return None
    if not isinstance(raw, str) or not _ADDRESS.match(raw):
        raise SchemaError(name, "expected lowercase 0x-prefixed 20-byte address")
    return raw


def _uint(raw: Any, name: str, bits: int = 256) -> int:
    if isinstance(raw, bool):
        raise SchemaError(name, "expected unsigned integer")
    if isinstance(raw, int):
        value = raw
    elif isinstance(raw, str) and raw.isdigit():
        value = int(raw)
    else:
        raise SchemaError(name, "expected unsigned decimal integer")
    if not 0 <= value < 1 << bits:
        raise SchemaError(name, "out of range")
    return value


def _transfer(raw: Any, i: int) -> Transfer:
    if not isinstance(raw, dict):
        raise SchemaError(f"transfers[{i}]", "expected object")
    for key in ("asset", "from", "to", "amount"):
        if key not in raw:
            raise SchemaError(f"transfers[{i}].{key}", "missing")
    asset = raw["asset"]
    if asset != NATIVE:
        asset = _address(asset, f"transfers[{i}].asset")
    sender = _address(raw["from"], f"transfers[{i}].from")
    recipient = _address(raw["to"], f"transfers[{i}].to")
    amount = _uint(raw["amount"], f"transfers[{i}].amount")
    if amount == 0:
        raise SchemaError(f"transfers[{i}].amount", "must be positive")
    if sender == recipient:
        raise SchemaError(f"transfers[{i}].to", "transfer to self")
    return Transfer(asset, sender, recipient, amount)  # type: ignore[arg-type]


def parse_fixture(line: str | Mapping[str, Any]) -> Transaction:
    """Validate one JSONL record; unknown fields are ignored."""
    if isinstance(line, str):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError("<record>", f"malformed JSON: {exc.msg}") from None
    else:
        rec = line
    if not isinstance(rec, dict):
        raise SchemaError("<record>", "expected JSON object")
    for key in ("hash", "block_number", "tx_index", "from", "gas_used",
                "gas_price", "status"):
        if key not in rec:
            raise SchemaError(key, "missing")
    if not isinstance(rec["hash"], str) or not _HASH.match(rec["hash"]):
        raise SchemaError("hash", "expected lowercase 0x-prefixed 32-byte hash")
    status = rec["status"]
    if status not in (SUCCESS, REVERTED):
        raise SchemaError("status", "expected 'success' or 'reverted'")
    raw_transfers = rec.get("transfers", [])
    if not isinstance(raw_transfers, list):
        raise SchemaError("transfers", "expected list")
    transfers = tuple(_transfer(t, i) for i, t in enumerate(raw_transfers))
    if status == REVERTED and transfers:
        raise SchemaError("transfers", "reverted transaction moves no assets")
    return Transaction(
        hash=rec["hash"],
        block_number=_uint(rec["block_number"], "block_number", 64),
        tx_index=_uint(rec["tx_index"], "tx_index", 64),
        sender=_address(rec["from"], "from"),  # type: ignore[arg-type]
        to=_address(rec.get("to"), "to", optional=True),
        value=_uint(rec.get("value", "0"), "value"),
        gas_used=_uint(rec["gas_used"], "gas_used", 64),
        gas_price=_uint(rec["gas_price"], "gas_price"),
        status=status,
        transfers=transfers,
    )


def to_record(tx: Transaction) -> dict[str, Any]:
    return {
        "hash": tx.hash,
        "block_number": tx.block_number,
        "tx_index": tx.tx_index,
        "from": tx.sender,
        "to": tx.to,
        "value": str(tx.value),
        "gas_used": tx.gas_used,
        "gas_price": str(tx.gas_price),
        "status": tx.status,
        "transfers": [
            {"asset": t.asset, "from": t.sender, "to": t.recipient, "amount": str(t.amount)}
            for t in tx.transfers
        ],
    }


def serialize(tx: Transaction) -> str:
    return json.dumps(to_record(tx), separators=(",", ":"))


def open_text(path: str | Path) -> TextIO:
    """Open a fixture file, transparently decompressing gzip (by magic bytes)."""
    raw = open(path, "rb")
    head = raw.peek(2)[:2] if hasattr(raw, "peek") else b""
    if head == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.GzipFile(fileobj=raw), encoding="utf-8")
    return io.TextIOWrapper(raw, encoding="utf-8")


def iter_records(lines: Iterable[str]) -> Iterator[tuple[int, Transaction]]:
    """Yield (line number, transaction) for non-blank lines."""
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            yield lineno, parse_fixture(line)


def load_dataset(lines: Iterable[str]) -> list[Transaction]:
    seen: dict[tuple[int, int], int] = {}
    out = []
    for lineno, tx in iter_records(lines):
        if tx.position in seen:
            raise DatasetError(
                f"line {lineno}: duplicate (block_number, tx_index) {tx.position}, "
                f"first seen on line {seen[tx.position]}")
        seen[tx.position] = lineno
        out.append(tx)
    return out

