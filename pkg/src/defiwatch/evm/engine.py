"""Bounded symbolic execution over a disassembled program.

Symbol naming is part of the contract, since test harnesses and reports bind
concrete inputs by name:

* ``calldata:<off>``   CALLDATALOAD at a concrete offset
* ``calldatasize``, ``callvalue``, ``caller``, ``address``
* ``storage:<slot>``   initial contents of a never-written concrete slot
* ``call<k>.ok``, ``call<k>.size``, ``call<k>.w<i>``
                      success flag, return-data size and return-data words of the
                      k-th external call on the path
* ``havoc:*``, ``balance@*``  unconstrained values with no concrete binding
"""

from __future__ import annotations

import copy
import enum
from collections.abc import Callable
from dataclasses import dataclass, field

from defiwatch.evm.asm import Instruction, Program
from defiwatch.evm.feasibility import Verdict, feasible
from defiwatch.evm.values import (
    BYTES,
    NO_TAINT,
    SHA3,
    SymValue,
    apply,
    assemble_bytes,
    const,
    symbol,
)

MAX_STACK = 1024


class CalleeClass(enum.Enum):
    ORACLE = "oracle"
    TOKEN = "token"
    UNKNOWN = "unknown"


CalleeClassifier = Callable[[SymValue], CalleeClass]


def classify_nothing(_callee: SymValue) -> CalleeClass:
    return CalleeClass.UNKNOWN


class Status(enum.Enum):
    RUNNING = "running"
    STOP = "stop"
    RETURN = "return"
    REVERT = "revert"
    ERROR = "error"
    CUT = "bound_cut"


@dataclass(frozen=True)
class CallEnv:
    """Concrete transaction context; ``None`` fields stay symbolic."""

    callvalue: int | None = None
    caller: int | None = None
    address: int | None = None
    calldata: bytes | None = None


@dataclass(frozen=True)
class ExternalCallRecord:
    site: int
    opcode: str
    callee: SymValue
    value: SymValue
    args: SymValue
    args_tainted: bool
    classified: CalleeClass
    returned: SymValue
    origin: int | None
    trace_index: int


@dataclass(frozen=True)
class StorageWrite:
    site: int
    slot: SymValue
    value: SymValue
    trace_index: int


@dataclass(frozen=True)
class ExploreConfig:
    max_depth: int = 4096
    max_paths: int = 256
    loop_bound: int = 2
    # "interval" for the built-in evaluator, "none" to skip pruning,
    # or any callable with the signature of ``feasible``.
    feasibility: str | Callable[[list[tuple[SymValue, bool]]], Verdict] = "interval"

    def __post_init__(self) -> None:
        for name in ("max_depth", "max_paths", "loop_bound"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def checker(self) -> Callable[[list[tuple[SymValue, bool]]], Verdict]:
        if callable(self.feasibility):
            return self.feasibility
        if self.feasibility == "interval":
            return feasible
        if self.feasibility == "none":
            return lambda _c: Verdict.UNKNOWN
        raise ValueError(f"unknown feasibility backend {self.feasibility!r}")


# Memory maps a byte offset to (source word, byte index within that word).
MemByte = tuple[SymValue, int]
_ZERO_BYTE: MemByte = (const(0), 31)


@dataclass
class MachineState:
    pc: int = 0
    env: CallEnv = field(default_factory=CallEnv)
    stack: list[SymValue] = field(default_factory=list)
    memory: dict[int, MemByte] = field(default_factory=dict)
    havoc_memory: bool = False
    memory_taint: frozenset[int] = NO_TAINT
    storage: dict[int, SymValue] = field(default_factory=dict)
    havoc_storage: bool = False
    storage_taint: frozenset[int] = NO_TAINT
    constraints: list[tuple[SymValue, bool]] = field(default_factory=list)
    trace: list[int] = field(default_factory=list)
    call_log: list[ExternalCallRecord] = field(default_factory=list)
    storage_writes: list[StorageWrite] = field(default_factory=list)
    jumpdest_visits: dict[int, int] = field(default_factory=dict)
    last_call: int | None = None
    next_origin: int = 0
    status: Status = Status.RUNNING
    reason: str | None = None

    def clone(self) -> MachineState:
        new = copy.copy(self)
        new.stack = list(self.stack)
        new.memory = dict(self.memory)
        new.storage = dict(self.storage)
        new.constraints = list(self.constraints)
        new.trace = list(self.trace)
        new.call_log = list(self.call_log)
        new.storage_writes = list(self.storage_writes)
        new.jumpdest_visits = dict(self.jumpdest_visits)
        return new

    @property
    def terminal(self) -> bool:
        return self.status is not Status.RUNNING

    @property
    def label(self) -> str:
        if self.status in (Status.ERROR, Status.CUT):
            return f"{self.status.value}:{self.reason}"
        return self.status.value

    def origin_site(self, origin: int) -> ExternalCallRecord:
        for rec in self.call_log:
            if rec.origin == origin:
                return rec
        raise KeyError(origin)


def init_state(program: Program, env: CallEnv | None = None) -> MachineState:
    return MachineState(env=env or CallEnv())


class _Halt(Exception):
    def __init__(self, status: Status, reason: str | None = None):
        self.status = status
        self.reason = reason


def _tag(state: MachineState, base: str) -> str:
    return f"{base}@{state.pc}.{len(state.trace)}"


def _pop(state: MachineState, n: int = 1) -> list[SymValue]:
    if len(state.stack) < n:
        raise _Halt(Status.ERROR, "StackUnderflow")
    out = state.stack[-n:][::-1]
    del state.stack[-n:]
    return out


def _push(state: MachineState, v: SymValue) -> None:
    if len(state.stack) >= MAX_STACK:
        raise _Halt(Status.ERROR, "StackOverflow")
    state.stack.append(v)


def _read_memory(state: MachineState, offset: SymValue, size: SymValue,
                 op: str) -> SymValue:
    """Read ``size`` bytes at ``offset`` as a BYTES/SHA3 value."""
    if state.havoc_memory or not offset.is_concrete or not size.is_concrete:
        extra = offset.taint | size.taint
        return symbol(_tag(state, "havoc:mem"), state.memory_taint | extra)
    base, n = offset.value, size.value
    assert base is not None and n is not None
    if n > 1 << 20:
        return symbol(_tag(state, "havoc:mem"), state.memory_taint)
    sel = [state.memory.get(base + i, _ZERO_BYTE) for i in range(n)]
    return assemble_bytes(op, sel)


def _write_memory(state: MachineState, offset: SymValue,
                  selectors: list[MemByte] | None, taint: frozenset[int]) -> None:
    """Write byte selectors at ``offset``; ``selectors=None`` means unknown extent."""
    state.memory_taint = state.memory_taint | taint | offset.taint
    if selectors is None or not offset.is_concrete:
        state.havoc_memory = True
        return
    assert offset.value is not None
    for i, b in enumerate(selectors):
        state.memory[offset.value + i] = b


def _word_selectors(v: SymValue) -> list[MemByte]:
    return [(v, k) for k in range(32)]


def _jump(state: MachineState, program: Program, target: SymValue) -> None:
    if not target.is_concrete:
        raise _Halt(Status.ERROR, "SymbolicJumpTarget")
    if target.value not in program.jumpdests:
        raise _Halt(Status.ERROR, "InvalidJump")
    state.pc = target.value


def _env_value(state: MachineState, name: str) -> SymValue:
    v = getattr(state.env, name)
    return symbol(name) if v is None else const(v)


def _call(state: MachineState, ins: Instruction,
          hooks: CalleeClassifier) -> None:
    op = ins.mnemonic
    if op == "CALL":
        _gas, callee, value, a_off, a_len, r_off, r_len = _pop(state, 7)
    else:
        _gas, callee, a_off, a_len, r_off, r_len = _pop(state, 6)
        value = const(0)
    args = _read_memory(state, a_off, a_len, BYTES)
    args_taint = args.taint | a_off.taint | a_len.taint
    cls = hooks(callee)
    k = len(state.call_log)
    origin = None
    taint = NO_TAINT
    if cls is CalleeClass.ORACLE:
        origin = state.next_origin
        state.next_origin += 1
        taint = frozenset({origin})
    ok = symbol(f"call{k}.ok", taint)

    if r_len.is_concrete and r_off.is_concrete:
        n = r_len.value or 0
        words = [symbol(f"call{k}.w{i}", taint) for i in range((n + 31) // 32)]
        sel = [(words[i // 32], i % 32) for i in range(n)]
        _write_memory(state, r_off, sel, taint)
    else:
        _write_memory(state, r_off, None, taint | r_len.taint)

    state.call_log.append(ExternalCallRecord(
        site=ins.offset, opcode=op, callee=callee, value=value, args=args,
        args_tainted=bool(args_taint), classified=cls, returned=ok,
        origin=origin, trace_index=len(state.trace) - 1,
    ))
    state.last_call = k
    _push(state, ok)


def _returndata_word(state: MachineState, i: int) -> SymValue:
    k = state.last_call
    rec = state.call_log[k]  # type: ignore[index]
    return symbol(f"call{k}.w{i}", rec.returned.taint)


def step(state: MachineState, program: Program,
         hooks: CalleeClassifier = classify_nothing) -> list[MachineState]:
    """Execute one instruction, returning the successor states.

    A symbolic JUMPI yields two successors, false branch first.  Faults come
    back as terminal states rather than exceptions.
    """
    s = state.clone()
    ins = program.at(s.pc)
    if ins is None:
        # Running off the end of code halts like STOP.
        s.status = Status.STOP
        return [s]
    s.trace.append(ins.offset)
    try:
        return _execute(s, ins, program, hooks)
    except _Halt as halt:
        s.status, s.reason = halt.status, halt.reason
        return [s]


def _execute(s: MachineState, ins: Instruction, program: Program,
             hooks: CalleeClassifier) -> list[MachineState]:
    op = ins.mnemonic
    nxt = ins.offset + ins.size
    code = ins.opcode.code

    if ins.opcode.immediate_len:
        _push(s, const(ins.immediate or 0))
    elif 0x80 <= code <= 0x8F:  # DUPn
        n = code - 0x7F
        if len(s.stack) < n:
            raise _Halt(Status.ERROR, "StackUnderflow")
        _push(s, s.stack[-n])
    elif 0x90 <= code <= 0x9F:  # SWAPn
        n = code - 0x8F
        if len(s.stack) < n + 1:
            raise _Halt(Status.ERROR, "StackUnderflow")
        s.stack[-1], s.stack[-1 - n] = s.stack[-1 - n], s.stack[-1]
    elif op in ("ADD", "MUL", "SUB", "DIV", "MOD", "EXP", "LT", "GT", "EQ",
                "AND", "OR", "XOR", "SHL", "SHR"):
        _push(s, apply(op, _pop(s, 2)))
    elif op in ("ISZERO", "NOT"):
        _push(s, apply(op, _pop(s, 1)))
    elif op == "STOP":
        s.status = Status.STOP
        return [s]
    elif op in ("RETURN", "REVERT"):
        _pop(s, 2)
        s.status = Status.RETURN if op == "RETURN" else Status.REVERT
        return [s]
    elif op == "JUMPDEST":
        s.jumpdest_visits[ins.offset] = s.jumpdest_visits.get(ins.offset, 0) + 1
    elif op == "POP":
        _pop(s)
    elif op == "PC":
        _push(s, const(ins.offset))
    elif op in ("CALLER", "CALLVALUE", "ADDRESS"):
        _push(s, _env_value(s, {"CALLER": "caller", "CALLVALUE": "callvalue",
                                "ADDRESS": "address"}[op]))
    elif op == "CALLDATASIZE":
        cd = s.env.calldata
        _push(s, symbol("calldatasize") if cd is None else const(len(cd)))
    elif op == "CALLDATALOAD":
        (off,) = _pop(s)
        cd = s.env.calldata
        if cd is not None and off.is_concrete:
            word = cd[off.value:off.value + 32].ljust(32, b"\0")
            _push(s, const(int.from_bytes(word, "big"), off.taint))
        elif off.is_concrete:
            _push(s, symbol(f"calldata:{off.value}", off.taint))
        else:
            _push(s, apply("CALLDATALOAD", [off]))
    elif op == "BALANCE":
        (addr,) = _pop(s)
        _push(s, symbol(_tag(s, "balance"), addr.taint))
    elif op == "SHA3":
        off, size = _pop(s, 2)
        region = _read_memory(s, off, size, SHA3)
        if region.op != SHA3:
            region = SymValue(SHA3, (region,), params=tuple(
                x for k in range(32) for x in (0, k)), taint=region.taint)
        _push(s, region)
    elif op == "MLOAD":
        (off,) = _pop(s)
        _push(s, _read_memory(s, off, const(32), BYTES))
    elif op == "MSTORE":
        off, val = _pop(s, 2)
        _write_memory(s, off, _word_selectors(val), val.taint)
    elif op == "SLOAD":
        (slot,) = _pop(s)
        if s.havoc_storage or not slot.is_concrete:
            _push(s, symbol(_tag(s, "havoc:storage"), s.storage_taint | slot.taint))
        elif slot.value in s.storage:
            _push(s, s.storage[slot.value])
        else:
            _push(s, symbol(f"storage:{slot.value}"))
    elif op == "SSTORE":
        slot, val = _pop(s, 2)
        s.storage_taint = s.storage_taint | val.taint | slot.taint
        if slot.is_concrete:
            s.storage[slot.value] = val  # type: ignore[index]
        else:
            s.havoc_storage = True
        s.storage_writes.append(StorageWrite(ins.offset, slot, val, len(s.trace) - 1))
    elif op == "JUMP":
        (target,) = _pop(s)
        _jump(s, program, target)
        return [s]
    elif op == "JUMPI":
        target, cond = _pop(s, 2)
        if cond.is_concrete:
            if cond.value:
                _jump(s, program, target)
            else:
                s.pc = nxt
            return [s]
        taken = s.clone()
        s.pc = nxt
        s.constraints.append((cond, False))
        taken.constraints.append((cond, True))
        try:
            _jump(taken, program, target)
        except _Halt as halt:
            taken.status, taken.reason = halt.status, halt.reason
        return [s, taken]
    elif op in ("CALL", "STATICCALL", "DELEGATECALL"):
        _call(s, ins, hooks)
    elif op == "RETURNDATASIZE":
        if s.last_call is None:
            _push(s, const(0))
        else:
            rec = s.call_log[s.last_call]
            _push(s, symbol(f"call{s.last_call}.size", rec.returned.taint))
    elif op == "RETURNDATACOPY":
        dest, off, size = _pop(s, 3)
        if s.last_call is None:
            # No return buffer yet: only a zero-length copy at offset 0 is legal.
            if not (off.is_concrete and size.is_concrete and off.value == size.value == 0):
                raise _Halt(Status.ERROR, "ReturnDataOutOfBounds")
        else:
            taint = s.call_log[s.last_call].returned.taint
            if off.is_concrete and size.is_concrete and size.value <= 1 << 16:
                sel = []
                for j in range(size.value):  # type: ignore[arg-type]
                    pos = off.value + j  # type: ignore[operator]
                    sel.append((_returndata_word(s, pos // 32), pos % 32))
                _write_memory(s, dest, sel, taint)
            else:
                _write_memory(s, dest, None, taint | off.taint | size.taint)
    elif op.startswith("LOG"):
        _pop(s, 2 + int(op[3:]))
    else:  # pragma: no cover - table and dispatch are kept in sync
        raise NotImplementedError(op)

    s.pc = nxt
    return [s]


@dataclass
class Exploration:
    terminals: list[MachineState]
    pruned: int = 0
    truncated: bool = False

    @property
    def cuts(self) -> int:
        n = sum(1 for t in self.terminals if t.status is Status.CUT)
        return n + int(self.truncated)


def run_exploration(program: Program, config: ExploreConfig | None = None,
                    hooks: CalleeClassifier = classify_nothing,
                    env: CallEnv | None = None) -> Exploration:
    config = config or ExploreConfig()
    check = config.checker()
    result = Exploration([])
    pending = [init_state(program, env)]
    while pending:
        if len(result.terminals) >= config.max_paths:
            result.truncated = True
            break
        state = pending.pop()
        if state.terminal:
            result.terminals.append(state)
            continue
        cut = _bound_cut(state, program, config)
        if cut:
            state = state.clone()
            state.status, state.reason = Status.CUT, cut
            result.terminals.append(state)
            continue
        successors = step(state, program, hooks)
        if len(successors) > 1:
            kept = []
            for succ in successors:
                if check(succ.constraints) is Verdict.INFEASIBLE:
                    result.pruned += 1
                else:
                    kept.append(succ)
            successors = kept
        # Reverse so the false branch is explored first.
        pending.extend(reversed(successors))
    return result


def explore(program: Program, config: ExploreConfig | None = None,
            hooks: CalleeClassifier = classify_nothing,
            env: CallEnv | None = None) -> list[MachineState]:
    return run_exploration(program, config, hooks, env).terminals


def _bound_cut(state: MachineState, program: Program, config: ExploreConfig) -> str | None:
    if len(state.trace) >= config.max_depth:
        return "depth"
    if state.pc in program.jumpdests:
        if state.jumpdest_visits.get(state.pc, 0) >= config.loop_bound:
            return "loop_bound"
    return None
