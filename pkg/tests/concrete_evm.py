"""Reference concrete interpreter for the supported opcode subset.

Written independently of the symbolic engine and used only as a test oracle:
byte-addressed memory, plain integer stack, dict storage.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

M = 2**256


@dataclass
class Inputs:
    calldata: bytes = b""
    callvalue: int = 0
    caller: int = 0
    address: int = 0
    storage: dict[int, int] = field(default_factory=dict)
    # k -> (success flag, return data) for the k-th external call
    call_result: Callable[[int], tuple[int, bytes]] = lambda k: (1, bytes(64))

    def lookup(self, name: str) -> int:
        """Bind the symbol names the engine emits to these concrete inputs."""
        if name.startswith("calldata:"):
            off = int(name.split(":")[1])
            return int.from_bytes(self.calldata[off:off + 32].ljust(32, b"\0"), "big")
        if name == "calldatasize":
            return len(self.calldata)
        if name in ("callvalue", "caller", "address"):
            return getattr(self, name)
        if name.startswith("storage:"):
            return self.storage.get(int(name.split(":")[1]), 0)
        if name.startswith("call"):
            head, part = name.split(".")
            ok, data = self.call_result(int(head[4:]))
            if part == "ok":
                return ok
            if part == "size":
                return len(data)
            i = int(part[1:])
            return int.from_bytes(data[32 * i:32 * i + 32].ljust(32, b"\0"), "big")
        raise KeyError(name)


@dataclass
class Run:
    status: str
    trace: list[int]
    writes: list[tuple[int, int, int]]
    calls: list[tuple[int, int, int]]
    stack: list[int]


class _Fault(Exception):
    pass


def run(code: bytes, inputs: Inputs, max_steps: int = 100_000) -> Run:
    # Jump destinations: 0x5b bytes that are not inside push data.
    dests = set()
    i = 0
    while i < len(code):
        if code[i] == 0x5B:
            dests.add(i)
        i += 1 + (code[i] - 0x5F if 0x60 <= code[i] <= 0x7F else 0)

    stack: list[int] = []
    mem = bytearray()
    storage = dict(inputs.storage)
    trace: list[int] = []
    writes: list[tuple[int, int, int]] = []
    calls: list[tuple[int, int, int]] = []
    retdata: bytes | None = None
    pc = 0

    def pop() -> int:
        if not stack:
            raise _Fault
        return stack.pop()

    def push(v: int) -> None:
        if len(stack) >= 1024:
            raise _Fault
        stack.append(v % M)

    def grow(end: int) -> None:
        if end > len(mem):
            mem.extend(bytes(end - len(mem)))

    def mread(off: int, n: int) -> bytes:
        if n == 0:
            return b""
        grow(off + n)
        return bytes(mem[off:off + n])

    def mwrite(off: int, data: bytes) -> None:
        if data:
            grow(off + len(data))
            mem[off:off + len(data)] = data

    status = "stop"
    try:
        for _ in range(max_steps):
            if pc >= len(code):
                break
            op = code[pc]
            trace.append(pc)
            nxt = pc + 1
            if 0x60 <= op <= 0x7F:
                n = op - 0x5F
                push(int.from_bytes(code[pc + 1:pc + 1 + n].ljust(n, b"\0"), "big"))
                nxt = pc + 1 + n
            elif 0x80 <= op <= 0x8F:
                n = op - 0x7F
                if len(stack) < n:
                    raise _Fault
                push(stack[-n])
            elif 0x90 <= op <= 0x9F:
                n = op - 0x8F
                if len(stack) < n + 1:
                    raise _Fault
                stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
            elif op == 0x00:
                break
            elif op == 0x01:
                push(pop() + pop())
            elif op == 0x02:
                push(pop() * pop())
            elif op == 0x03:
                a, b = pop(), pop()
                push(a - b)
            elif op == 0x04:
                a, b = pop(), pop()
                push(0 if b == 0 else a // b)
            elif op == 0x06:
                a, b = pop(), pop()
                push(0 if b == 0 else a % b)
            elif op == 0x0A:
                a, b = pop(), pop()
                push(pow(a, b, M))
            elif op == 0x10:
                a, b = pop(), pop()
                push(1 if a < b else 0)
            elif op == 0x11:
                a, b = pop(), pop()
                push(1 if a > b else 0)
            elif op == 0x14:
                push(1 if pop() == pop() else 0)
            elif op == 0x15:
                push(1 if pop() == 0 else 0)
            elif op == 0x16:
                push(pop() & pop())
            elif op == 0x17:
                push(pop() | pop())
            elif op == 0x18:
                push(pop() ^ pop())
            elif op == 0x19:
                push(M - 1 - pop())
            elif op == 0x1B:
                sh, v = pop(), pop()
                push(v << sh if sh < 256 else 0)
            elif op == 0x1C:
                sh, v = pop(), pop()
                push(v >> sh if sh < 256 else 0)
            elif op == 0x20:
                off, n = pop(), pop()
                data = mread(off, n)
                push(int.from_bytes(hashlib.sha3_256(data).digest(), "big"))
            elif op == 0x30:
                push(inputs.address)
            elif op == 0x33:
                push(inputs.caller)
            elif op == 0x34:
                push(inputs.callvalue)
            elif op == 0x35:
                off = pop()
                push(int.from_bytes(inputs.calldata[off:off + 32].ljust(32, b"\0"), "big"))
            elif op == 0x36:
                push(len(inputs.calldata))
            elif op == 0x3D:
                push(0 if retdata is None else len(retdata))
            elif op == 0x3E:
                dest, off, n = pop(), pop(), pop()
                rd = retdata or b""
                if off + n > len(rd):
                    raise _Fault
                mwrite(dest, rd[off:off + n])
            elif op == 0x50:
                pop()
            elif op == 0x51:
                push(int.from_bytes(mread(pop(), 32), "big"))
            elif op == 0x52:
                off, v = pop(), pop()
                mwrite(off, v.to_bytes(32, "big"))
            elif op == 0x54:
                push(storage.get(pop(), 0))
            elif op == 0x55:
                slot, v = pop(), pop()
                storage[slot] = v
                writes.append((pc, slot, v))
            elif op == 0x56:
                dest = pop()
                if dest not in dests:
                    raise _Fault
                nxt = dest
            elif op == 0x57:
                dest, cond = pop(), pop()
                if cond:
                    if dest not in dests:
                        raise _Fault
                    nxt = dest
            elif op == 0x58:
                push(pc)
            elif op == 0x5B:
                pass
            elif op in (0xF1, 0xF4, 0xFA):
                pop()  # gas
                callee = pop()
                value = pop() if op == 0xF1 else 0
                a_off, a_len, r_off, r_len = pop(), pop(), pop(), pop()
                mread(a_off, a_len)
                ok, data = inputs.call_result(len(calls))
                calls.append((pc, callee, value))
                retdata = data
                mwrite(r_off, data[:r_len])
                push(ok)
            elif op == 0xF3:
                pop(), pop()
                status = "return"
                break
            elif op == 0xFD:
                pop(), pop()
                status = "revert"
                break
            elif 0xA0 <= op <= 0xA4:
                for _ in range(op - 0xA0 + 2):
                    pop()
            else:
                raise _Fault
            pc = nxt
        else:
            raise RuntimeError("step budget exhausted")
    except _Fault:
        status = "error"
    return Run(status, trace, writes, calls, stack)
