"""256-bit symbolic values with oracle-origin taint."""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

from defiwatch.evm.asm import WORD_MASK

CONST = "const"
SYM = "sym"

# Byte-assembly operators: params holds (source index, byte index) pairs,
# one pair per output byte, big-endian.
BYTES = "BYTES"
SHA3 = "SHA3"

ARITY = {
    "ADD": 2, "MUL": 2, "SUB": 2, "DIV": 2, "MOD": 2, "EXP": 2,
    "LT": 2, "GT": 2, "EQ": 2, "AND": 2, "OR": 2, "XOR": 2,
    "SHL": 2, "SHR": 2, "ISZERO": 1, "NOT": 1, "CALLDATALOAD": 1,
}

NO_TAINT: frozenset[int] = frozenset()


@dataclass(frozen=True)
class SymValue:
    op: str
    args: tuple[SymValue, ...] = ()
    value: int | None = None
    name: str | None = None
    params: tuple[int, ...] = ()
    taint: frozenset[int] = field(default=NO_TAINT, compare=False)

    @property
    def is_concrete(self) -> bool:
        return self.op == CONST

    @property
    def is_symbol(self) -> bool:
        return self.op == SYM

    def with_taint(self, extra: Iterable[int]) -> SymValue:
        return SymValue(self.op, self.args, self.value, self.name, self.params,
                        self.taint | frozenset(extra))

    def __repr__(self) -> str:
        if self.op == CONST:
            text = hex(self.value)  # type: ignore[arg-type]
        elif self.op == SYM:
            text = str(self.name)
        elif self.op in (BYTES, SHA3):
            text = f"{self.op}[{len(self.params) // 2}]"
        else:
            text = f"{self.op}({', '.join(map(repr, self.args))})"
        if self.taint:
            text += "{" + ",".join(map(str, sorted(self.taint))) + "}"
        return text


def const(value: int, taint: Iterable[int] = NO_TAINT) -> SymValue:
    return SymValue(CONST, value=value & WORD_MASK, taint=frozenset(taint))


def symbol(name: str, taint: Iterable[int] = NO_TAINT) -> SymValue:
    return SymValue(SYM, name=name, taint=frozenset(taint))


def union_taint(values: Iterable[SymValue]) -> frozenset[int]:
    out: frozenset[int] = NO_TAINT
    for v in values:
        if v.taint:
            out = out | v.taint
    return out


def arith(op: str, vals: list[int]) -> int:
    """Concrete semantics of the pure operators; operands are top-of-stack first."""
    a = vals[0]
    if op == "ISZERO":
        return int(a == 0)
    if op == "NOT":
        return a ^ WORD_MASK
    b = vals[1]
    if op == "ADD":
        return (a + b) & WORD_MASK
    if op == "MUL":
        return (a * b) & WORD_MASK
    if op == "SUB":
        return (a - b) & WORD_MASK
    if op == "DIV":
        return a // b if b else 0
    if op == "MOD":
        return a % b if b else 0
    if op == "EXP":
        return pow(a, b, 1 << 256)
    if op == "LT":
        return int(a < b)
    if op == "GT":
        return int(a > b)
    if op == "EQ":
        return int(a == b)
    if op == "AND":
        return a & b
    if op == "OR":
        return a | b
    if op == "XOR":
        return a ^ b
    if op == "SHL":
        return (b << a) & WORD_MASK if a < 256 else 0
    if op == "SHR":
        return b >> a if a < 256 else 0
    raise ValueError(f"no concrete semantics for {op}")


def apply(op: str, args: tuple[SymValue, ...] | list[SymValue]) -> SymValue:
    """Build ``op(args)``, folding to a constant when every operand is concrete."""
    args = tuple(args)
    if len(args) != ARITY[op]:
        raise ValueError(f"{op} takes {ARITY[op]} operands, got {len(args)}")
    taint = union_taint(args)
    if op != "CALLDATALOAD" and all(a.is_concrete for a in args):
        return const(arith(op, [a.value for a in args]), taint)  # type: ignore[misc]
    return SymValue(op, args, taint=taint)


def assemble_bytes(op: str, selectors: list[tuple[SymValue, int]]) -> SymValue:
    """Combine per-byte selectors into a BYTES or SHA3 value.

    ``selectors[i] = (source, k)`` means output byte ``i`` is byte ``k`` (big-endian,
    0..31) of the 256-bit ``source``.
    """
    sources: list[SymValue] = []
    index: dict[tuple[SymValue, frozenset[int]], int] = {}
    params: list[int] = []
    for src, k in selectors:
        key = (src, src.taint)
        if key not in index:
            index[key] = len(sources)
            sources.append(src)
        params += (index[key], k)
    taint = union_taint(sources)
    if op == BYTES:
        if all(s.is_concrete for s in sources):
            word = 0
            for src, k in selectors:
                word = (word << 8) | _byte(src.value, k)  # type: ignore[arg-type]
            return const(word, taint)
        if (len(sources) == 1 and len(selectors) == 32
                and all(k == i for i, (_, k) in enumerate(selectors))):
            return sources[0]
    return SymValue(op, tuple(sources), params=tuple(params), taint=taint)


def _byte(word: int, k: int) -> int:
    return (word >> (8 * (31 - k))) & 0xFF


def hash_bytes(data: bytes) -> int:
    """Uninterpreted hash used for SHA3; stands in for keccak256."""
    return int.from_bytes(hashlib.sha3_256(data).digest(), "big")


Lookup = Callable[[str], int]


def evaluate(v: SymValue, lookup: Lookup, calldata: bytes | None = None,
             _memo: dict[int, int] | None = None) -> int:
    """Concrete value of ``v`` under an assignment of symbol names to integers.

    ``CALLDATALOAD`` with a symbolic offset needs ``calldata``; ``lookup`` raises
    KeyError for names it cannot bind.
    """
    memo = {} if _memo is None else _memo
    key = id(v)
    if key in memo:
        return memo[key]
    if v.op == CONST:
        out = v.value
    elif v.op == SYM:
        out = lookup(v.name) & WORD_MASK  # type: ignore[arg-type]
    elif v.op in (BYTES, SHA3):
        words = [evaluate(a, lookup, calldata, memo) for a in v.args]
        data = bytes(_byte(words[v.params[i]], v.params[i + 1])
                     for i in range(0, len(v.params), 2))
        out = hash_bytes(data) if v.op == SHA3 else int.from_bytes(data, "big")
    elif v.op == "CALLDATALOAD":
        if calldata is None:
            raise KeyError("calldata")
        off = evaluate(v.args[0], lookup, calldata, memo)
        out = int.from_bytes(calldata[off:off + 32].ljust(32, b"\0"), "big")
    else:
        out = arith(v.op, [evaluate(a, lookup, calldata, memo) for a in v.args])
    memo[key] = out  # type: ignore[assignment]
    return out  # type: ignore[return-value]


def symbols_of(v: SymValue) -> set[str]:
    out: set[str] = set()
    todo = [v]
    seen: set[int] = set()
    while todo:
        cur = todo.pop()
        if id(cur) in seen:
            continue
        seen.add(id(cur))
        if cur.op == SYM:
            out.add(cur.name)  # type: ignore[arg-type]
        todo.extend(cur.args)
    return out
