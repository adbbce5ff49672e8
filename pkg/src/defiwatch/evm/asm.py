"""Opcode table, disassembler and a small fixture assembler for the EVM subset."""

from __future__ import annotations

import re
from collections.abc import Iterator
from dataclasses import dataclass

WORD_MASK = (1 << 256) - 1


@dataclass(frozen=True)
class Opcode:
    mnemonic: str
    code: int
    pops: int
    pushes: int
    immediate_len: int = 0


def _table() -> dict[int, Opcode]:
    rows = [
        ("STOP", 0x00, 0, 0),
        ("ADD", 0x01, 2, 1),
        ("MUL", 0x02, 2, 1),
        ("SUB", 0x03, 2, 1),
        ("DIV", 0x04, 2, 1),
        ("MOD", 0x06, 2, 1),
        ("EXP", 0x0A, 2, 1),
        ("LT", 0x10, 2, 1),
        ("GT", 0x11, 2, 1),
        ("EQ", 0x14, 2, 1),
        ("ISZERO", 0x15, 1, 1),
        ("AND", 0x16, 2, 1),
        ("OR", 0x17, 2, 1),
        ("XOR", 0x18, 2, 1),
        ("NOT", 0x19, 1, 1),
        ("SHL", 0x1B, 2, 1),
        ("SHR", 0x1C, 2, 1),
        ("SHA3", 0x20, 2, 1),
        ("ADDRESS", 0x30, 0, 1),
        ("BALANCE", 0x31, 1, 1),
        ("CALLER", 0x33, 0, 1),
        ("CALLVALUE", 0x34, 0, 1),
        ("CALLDATALOAD", 0x35, 1, 1),
        ("CALLDATASIZE", 0x36, 0, 1),
        ("RETURNDATASIZE", 0x3D, 0, 1),
        ("RETURNDATACOPY", 0x3E, 3, 0),
        ("POP", 0x50, 1, 0),
        ("MLOAD", 0x51, 1, 1),
        ("MSTORE", 0x52, 2, 0),
        ("SLOAD", 0x54, 1, 1),
        ("SSTORE", 0x55, 2, 0),
        ("JUMP", 0x56, 1, 0),
        ("JUMPI", 0x57, 2, 0),
        ("PC", 0x58, 0, 1),
        ("JUMPDEST", 0x5B, 0, 0),
        ("CALL", 0xF1, 7, 1),
        ("RETURN", 0xF3, 2, 0),
        ("DELEGATECALL", 0xF4, 6, 1),
        ("STATICCALL", 0xFA, 6, 1),
        ("REVERT", 0xFD, 2, 0),
    ]
    table = {code: Opcode(name, code, pops, pushes) for name, code, pops, pushes in rows}
    for n in range(1, 33):
        table[0x5F + n] = Opcode(f"PUSH{n}", 0x5F + n, 0, 1, n)
    for n in range(1, 17):
        table[0x7F + n] = Opcode(f"DUP{n}", 0x7F + n, n, n + 1)
        table[0x8F + n] = Opcode(f"SWAP{n}", 0x8F + n, n + 1, n + 1)
    for n in range(5):
        table[0xA0 + n] = Opcode(f"LOG{n}", 0xA0 + n, n + 2, 0)
    return table


OPCODES: dict[int, Opcode] = _table()
BY_NAME: dict[str, Opcode] = {op.mnemonic: op for op in OPCODES.values()}

JUMPDEST = BY_NAME["JUMPDEST"].code


class UnknownOpcode(Exception):
    """A byte outside the supported opcode table was found at ``offset``."""

    def __init__(self, byte: int, offset: int):
        super().__init__(f"unknown opcode 0x{byte:02x} at offset {offset}")
        self.byte = byte
        self.offset = offset


class ParseError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: Opcode
    immediate: int | None = None

    @property
    def mnemonic(self) -> str:
        return self.opcode.mnemonic

    @property
    def size(self) -> int:
        return 1 + self.opcode.immediate_len

    def __str__(self) -> str:
        text = f"{self.offset:04x}  {self.mnemonic}"
        if self.immediate is not None:
            text += f" 0x{self.immediate:0{2 * self.opcode.immediate_len}x}"
        return text


@dataclass(frozen=True)
class Program:
    code: bytes
    instructions: tuple[Instruction, ...]
    jumpdests: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_index", {ins.offset: ins for ins in self.instructions}
        )

    def at(self, offset: int) -> Instruction | None:
        return self._index.get(offset)  # type: ignore[attr-defined]

    def __len__(self) -> int:
        return len(self.instructions)


def decode_instruction(code: bytes, offset: int) -> Instruction:
    if not 0 <= offset < len(code):
        raise IndexError(f"offset {offset} outside code of length {len(code)}")
    byte = code[offset]
    op = OPCODES.get(byte)
    if op is None:
        raise UnknownOpcode(byte, offset)
    if not op.immediate_len:
        return Instruction(offset, op)
    # A push cut off by end of code reads zeros past the end.
    raw = code[offset + 1 : offset + 1 + op.immediate_len]
    raw = raw.ljust(op.immediate_len, b"\x00")
    return Instruction(offset, op, int.from_bytes(raw, "big"))


def iter_instructions(code: bytes) -> Iterator[Instruction]:
    """Yield instructions in order; raises UnknownOpcode lazily at the bad byte."""
    offset = 0
    while offset < len(code):
        ins = decode_instruction(code, offset)
        yield ins
        offset += ins.size


def disassemble(code: bytes) -> Program:
    code = bytes(code)
    instructions = tuple(iter_instructions(code))
    jumpdests = frozenset(i.offset for i in instructions if i.opcode.code == JUMPDEST)
    return Program(code, instructions, jumpdests)


def parse_hex(text: str) -> bytes:
    """Parse hex text as found in bytecode files: optional 0x, whitespace ignored."""
    cleaned = "".join(text.split())
    if cleaned[:2] in ("0x", "0X"):
        cleaned = cleaned[2:]
    if len(cleaned) % 2:
        raise ValueError("odd number of hex digits")
    try:
        return bytes.fromhex(cleaned)
    except ValueError as exc:
        raise ValueError(f"malformed hex: {exc}") from None


_LABEL_DEF = re.compile(r"^([A-Za-z_][\w.]*):$")


def assemble(text: str) -> bytes:
    """Assemble one-instruction-per-line text into bytecode.

    Lines may carry ``;`` comments.  ``name:`` defines a label at the current
    offset and ``PUSHn @name`` pushes its offset, which makes jump fixtures
    readable.  Immediates are decimal or ``0x`` hex.
    """
    parsed: list[tuple[int, Opcode, int | str | None]] = []
    labels: dict[str, int] = {}
    offset = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        m = _LABEL_DEF.match(line)
        if m:
            if m.group(1) in labels:
                raise ParseError(lineno, f"duplicate label {m.group(1)!r}")
            labels[m.group(1)] = offset
            continue
        parts = line.split()
        op = BY_NAME.get(parts[0].upper())
        if op is None:
            raise ParseError(lineno, f"unknown mnemonic {parts[0]!r}")
        arg: int | str | None = None
        if op.immediate_len:
            if len(parts) != 2:
                raise ParseError(lineno, f"{op.mnemonic} takes one immediate")
            if parts[1].startswith("@"):
                arg = parts[1][1:]
            else:
                try:
                    arg = int(parts[1], 0)
                except ValueError:
                    raise ParseError(lineno, f"bad immediate {parts[1]!r}") from None
                if not 0 <= arg < 1 << (8 * op.immediate_len):
                    raise ParseError(
                        lineno, f"immediate {parts[1]} does not fit {op.mnemonic}"
                    )
        elif len(parts) != 1:
            raise ParseError(lineno, f"{op.mnemonic} takes no immediate")
        parsed.append((lineno, op, arg))
        offset += 1 + op.immediate_len

    out = bytearray()
    for lineno, op, arg in parsed:
        out.append(op.code)
        if isinstance(arg, str):
            if arg not in labels:
                raise ParseError(lineno, f"undefined label {arg!r}")
            value = labels[arg]
            if value >= 1 << (8 * op.immediate_len):
                raise ParseError(lineno, f"label {arg!r} does not fit {op.mnemonic}")
            out += value.to_bytes(op.immediate_len, "big")
        elif arg is not None:
            out += arg.to_bytes(op.immediate_len, "big")
    return bytes(out)
