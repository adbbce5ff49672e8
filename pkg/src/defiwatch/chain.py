"""Transaction sources for the monitor: JSONL fixture files and a JSON-RPC poller."""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from defiwatch.txmodel import (
    REVERTED,
    SUCCESS,
    OutOfOrderInput,
    Transaction,
    open_text,
    parse_fixture,
)

log = logging.getLogger(__name__)

Cursor = tuple[int, int]


class RpcError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(f"rpc error {code}: {message}")
        self.code = code
        self.message = message


class MalformedResponse(Exception):
    """The endpoint answered with something that is not JSON-RPC; not retried."""


class FileSource:
    """Reads a JSONL (optionally gzip) fixture in batches.

    ``cursor`` is the last delivered (block_number, tx_index); reopening with a
    saved cursor resumes with the undelivered suffix.
    """

    def __init__(self, path: str | Path, batch_size: int = 256,
                 cursor: Cursor | None = None):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.path = Path(path)
        self.batch_size = batch_size
        self.cursor = cursor
        self.eof = False
        self._fh = open_text(self.path)
        self._lineno = 0
        self._last_seen: Cursor | None = None

    def next_batch(self) -> list[Transaction]:
        batch: list[Transaction] = []
        while not self.eof and len(batch) < self.batch_size:
            line = self._fh.readline()
            if not line:
                self.eof = True
                self._fh.close()
                break
            self._lineno += 1
            if not line.strip():
                continue
            tx = parse_fixture(line)
            if self._last_seen is not None and tx.position <= self._last_seen:
                raise OutOfOrderInput(self._lineno, f"line {self._lineno}: {tx.position}")
            self._last_seen = tx.position
            if self.cursor is not None and tx.position <= self.cursor:
                continue
            batch.append(tx)
        if batch:
            self.cursor = batch[-1].position
        return batch

    def __iter__(self) -> Iterator[Transaction]:
        while not self.eof:
            yield from self.next_batch()

    def close(self) -> None:
        self._fh.close()


def _qty(raw: Any) -> int:
    if raw is None:
        return 0
    return int(raw, 16) if isinstance(raw, str) else int(raw)


@dataclass
class RpcClient:
    """Minimal JSON-RPC 2.0 over HTTP with unbounded exponential backoff."""

    url: str
    timeout: float = 30.0
    initial_backoff: float = 1.0
    max_backoff: float = 60.0
    max_attempts: int | None = None
    sleep: Callable[[float], None] = time.sleep
    _next_id: int = field(default=1, repr=False)

    def call(self, method: str, *params: Any) -> Any:
        delay = self.initial_backoff
        attempt = 0
        while True:
            attempt += 1
            try:
                return self._call_once(method, list(params))
            except (urllib.error.URLError, OSError, RpcError) as exc:
                if self.max_attempts is not None and attempt >= self.max_attempts:
                    raise
                log.warning("%s failed (%s); retrying in %.0fs", method, exc, delay)
                self.sleep(delay)
                delay = min(delay * 2, self.max_backoff)

    def _call_once(self, method: str, params: list[Any]) -> Any:
        body = json.dumps({"jsonrpc": "2.0", "id": self._next_id,
                           "method": method, "params": params}).encode()
        self._next_id += 1
        req = urllib.request.Request(self.url, data=body,
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            raw = resp.read()
        try:
            msg = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedResponse(f"{method}: {exc}") from None
        if not isinstance(msg, dict) or ("result" not in msg and "error" not in msg):
            raise MalformedResponse(f"{method}: not a JSON-RPC response")
        if msg.get("error"):
            err = msg["error"]
            raise RpcError(int(err.get("code", 0)), str(err.get("message", "")))
        return msg["result"]


def to_transaction(tx: dict[str, Any], receipt: dict[str, Any]) -> Transaction:
    """Map an eth_getBlockByNumber transaction plus its receipt.

    Only the native value is carried; token movements would need log decoding.
    """
    ok = _qty(receipt.get("status", "0x1")) == 1
    gas_price = receipt.get("effectiveGasPrice") or tx.get("gasPrice")
    return parse_fixture({
        "hash": tx["hash"].lower(),
        "block_number": _qty(tx["blockNumber"]),
        "tx_index": _qty(tx["transactionIndex"]),
        "from": tx["from"].lower(),
        "to": tx["to"].lower() if tx.get("to") else None,
        "value": str(_qty(tx.get("value"))),
        "gas_used": _qty(receipt.get("gasUsed")),
        "gas_price": str(_qty(gas_price)),
        "status": SUCCESS if ok else REVERTED,
        "transfers": [],
    })


class RpcSource:
    """Polls confirmed blocks, trailing the head by ``confirmation_depth``.

    ``next_batch`` returns the transactions of at most ``max_blocks`` newly
    confirmed blocks, or an empty list when nothing new is confirmed yet.
    """

    def __init__(self, client: RpcClient | str, start_block: int | None = None,
                 confirmation_depth: int = 6, max_blocks: int = 1,
                 poll_interval: float = 12.0):
        self.client = RpcClient(client) if isinstance(client, str) else client
        self.next_block = start_block
        self.confirmation_depth = confirmation_depth
        self.max_blocks = max_blocks
        self.poll_interval = poll_interval
        self.cursor: Cursor | None = None

    def next_batch(self) -> list[Transaction]:
        head = _qty(self.client.call("eth_blockNumber"))
        safe = head - self.confirmation_depth
        if self.next_block is None:
            self.next_block = max(safe, 0)
        out: list[Transaction] = []
        fetched = 0
        while self.next_block <= safe and fetched < self.max_blocks:
            block = self.client.call("eth_getBlockByNumber", hex(self.next_block), True)
            if block is None:
                break
            for tx in block.get("transactions", []):
                receipt = self.client.call("eth_getTransactionReceipt", tx["hash"])
                t = to_transaction(tx, receipt or {})
                if self.cursor is None or t.position > self.cursor:
                    out.append(t)
                    self.cursor = t.position
            self.next_block += 1
            fetched += 1
        return out
