from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from conftest import FIXTURES
from hypothesis import given, settings
from hypothesis import strategies as st
from txgen import streams

from defiwatch.chain import FileSource, MalformedResponse, RpcClient, RpcError, RpcSource
from defiwatch.txmodel import OutOfOrderInput, serialize

# -- file source ------------------------------------------------------------------


def write_jsonl(path, txs):
    path.write_text("".join(serialize(t) + "\n" for t in txs))
    return path


def test_empty_file_gives_one_empty_batch(tmp_path):
    src = FileSource(FIXTURES / "empty.jsonl")
    assert src.next_batch() == [] and src.eof


def test_batching(tmp_path, attack1):
    path = write_jsonl(tmp_path / "three.jsonl", attack1[:3])
    src = FileSource(path, batch_size=2)
    assert [len(src.next_batch()), len(src.next_batch())] == [2, 1]
    assert src.eof


def test_out_of_order_names_the_line(tmp_path, attack1):
    path = write_jsonl(tmp_path / "bad.jsonl", [attack1[0], attack1[2], attack1[1]])
    src = FileSource(path)
    with pytest.raises(OutOfOrderInput) as exc:
        list(src)
    assert exc.value.position == 3


@settings(max_examples=40, deadline=None)
@given(streams(max_blocks=5), st.integers(1, 4), st.data())
def test_resume_from_cursor_yields_suffix(tmp_path_factory, txs, batch, data):
    path = write_jsonl(tmp_path_factory.mktemp("resume") / "s.jsonl", txs)
    first = FileSource(path, batch_size=batch)
    delivered = []
    for _ in range(data.draw(st.integers(0, 3))):
        delivered += first.next_batch()
    first.close()
    rest = list(FileSource(path, batch_size=batch, cursor=first.cursor))
    assert delivered + rest == txs
    positions = [t.position for t in delivered + rest]
    assert len(positions) == len(set(positions))


# -- JSON-RPC ---------------------------------------------------------------------

SENDER = "0x" + "ab" * 20
TARGET = "0x" + "cd" * 20


def _block(n):
    txs = []
    for i in range(2):
        txs.append({"hash": "0x" + f"{n:032x}{i:032x}", "blockNumber": hex(n),
                    "transactionIndex": hex(i), "from": SENDER.upper().replace("0X", "0x"),
                    "to": TARGET, "value": hex(10 * n + i), "gasPrice": "0x3"})
    return {"number": hex(n), "transactions": txs}


class FakeChain:
    def __init__(self, head=20):
        self.head = head
        self.fail_next = 0  # respond with HTTP 503 this many times
        self.rpc_errors = 0  # respond with a JSON-RPC error this many times
        self.garbage = False
        self.calls: list[str] = []

    def handle(self, req):
        self.calls.append(req["method"])
        m, p = req["method"], req["params"]
        if m == "eth_blockNumber":
            return hex(self.head)
        if m == "eth_getBlockByNumber":
            n = int(p[0], 16)
            assert p[1] is True
            return _block(n) if n <= self.head else None
        if m == "eth_getTransactionReceipt":
            idx = int(p[0][-32:], 16)
            return {"status": "0x0" if idx == 1 else "0x1", "gasUsed": "0x5208",
                    "effectiveGasPrice": "0x2"}
        raise AssertionError(m)


@pytest.fixture
def chain():
    fake = FakeChain()

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            if fake.fail_next:
                fake.fail_next -= 1
                self.send_response(503)
                self.end_headers()
                return
            if fake.garbage:
                payload = b"<html>oops</html>"
            elif fake.rpc_errors:
                fake.rpc_errors -= 1
                payload = json.dumps({"jsonrpc": "2.0", "id": body["id"],
                                      "error": {"code": -32000, "message": "busy"}}).encode()
            else:
                payload = json.dumps({"jsonrpc": "2.0", "id": body["id"],
                                      "result": fake.handle(body)}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    fake.url = f"http://127.0.0.1:{server.server_address[1]}"
    yield fake
    server.shutdown()
    server.server_close()


def client(chain, **kw):
    sleeps: list[float] = []
    return RpcClient(chain.url, timeout=5, sleep=sleeps.append, **kw), sleeps


def test_rpc_source_maps_blocks(chain):
    rpc, _ = client(chain)
    src = RpcSource(rpc, start_block=10, confirmation_depth=6, max_blocks=2)
    batch = src.next_batch()
    assert [t.position for t in batch] == [(10, 0), (10, 1), (11, 0), (11, 1)]
    first, second = batch[:2]
    assert first.sender == SENDER and first.to == TARGET
    assert (first.value, first.gas_used, first.gas_price) == (100, 21000, 2)
    assert first.succeeded and not second.succeeded and first.transfers == ()


def test_rpc_source_trails_head(chain):
    rpc, _ = client(chain)
    src = RpcSource(rpc, start_block=13, confirmation_depth=6, max_blocks=10)
    assert [t.block_number for t in src.next_batch()] == [13, 13, 14, 14]
    assert src.next_batch() == []
    chain.head = 21
    assert [t.block_number for t in src.next_batch()] == [15, 15]


def test_rpc_source_defaults_to_confirmed_head(chain):
    rpc, _ = client(chain)
    src = RpcSource(rpc, confirmation_depth=6)
    assert {t.block_number for t in src.next_batch()} == {14}


def test_backoff_doubles_and_caps(chain):
    chain.fail_next = 8
    rpc, sleeps = client(chain)
    assert rpc.call("eth_blockNumber") == hex(20)
    assert sleeps == [1, 2, 4, 8, 16, 32, 60, 60]


def test_rpc_error_objects_are_retried(chain):
    chain.rpc_errors = 2
    rpc, sleeps = client(chain)
    assert rpc.call("eth_blockNumber") == hex(20) and sleeps == [1, 2]


def test_retry_limit_surfaces_error(chain):
    chain.rpc_errors = 5
    rpc, _ = client(chain, max_attempts=2)
    with pytest.raises(RpcError) as exc:
        rpc.call("eth_blockNumber")
    assert exc.value.code == -32000


def test_malformed_json_is_fatal(chain):
    chain.garbage = True
    rpc, sleeps = client(chain)
    with pytest.raises(MalformedResponse):
        rpc.call("eth_blockNumber")
    assert sleeps == []
