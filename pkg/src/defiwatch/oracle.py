"""Oracle-dependency analysis: which state updates are fed by an oracle call.

An oracle call's return value is tainted with a per-path origin id; a finding
is any sink whose operand carries that origin:

* ``storage_write``  SSTORE with a tainted slot or value
* ``value_transfer`` CALL whose native value argument is tainted
* ``call_argument``  CALL to a configured token whose calldata is tainted

Tainted calldata to a callee that is neither token nor oracle is kept as an
``info`` note and does not make the verdict vulnerable.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from defiwatch.evm.asm import Program, UnknownOpcode, disassemble
from defiwatch.evm.engine import (
    CalleeClass,
    ExploreConfig,
    MachineState,
    Status,
    run_exploration,
)
from defiwatch.evm.values import SymValue


class ConfigError(ValueError):
    pass


class DecodeFailed(Exception):
    def __init__(self, offset: int, message: str):
        super().__init__(f"decode failed at offset {offset}: {message}")
        self.offset = offset


_ADDRESS = re.compile(r"0x[0-9a-f]{40}")


def normalize_address(addr: str | int) -> int:
    if isinstance(addr, int):
        value = addr
    else:
        text = addr.strip().lower()
        if not _ADDRESS.fullmatch(text):
            raise ConfigError(f"address must be 0x followed by 40 hex digits: {addr!r}")
        value = int(text, 16)
    if not 0 <= value < 1 << 160:
        raise ConfigError(f"address out of range: {addr!r}")
    return value


@dataclass(frozen=True)
class AddressBook:
    oracles: frozenset[int] = frozenset()
    tokens: frozenset[int] = frozenset()
    wildcard_oracle: bool = False

    def __post_init__(self) -> None:
        overlap = self.oracles & self.tokens
        if overlap:
            shown = ", ".join(f"0x{a:040x}" for a in sorted(overlap))
            raise ConfigError(f"addresses listed as both oracle and token: {shown}")

    @classmethod
    def of(cls, oracles: Iterable[str | int] = (), tokens: Iterable[str | int] = (),
           wildcard_oracle: bool = False) -> AddressBook:
        return cls(frozenset(map(normalize_address, oracles)),
                   frozenset(map(normalize_address, tokens)), wildcard_oracle)

    def __call__(self, callee: SymValue) -> CalleeClass:
        return classify_callee(callee, self)


def classify_callee(addr: SymValue, book: AddressBook) -> CalleeClass:
    if addr.is_concrete:
        a = addr.value & ((1 << 160) - 1)  # type: ignore[operator]
        if a in book.oracles:
            return CalleeClass.ORACLE
        if a in book.tokens:
            return CalleeClass.TOKEN
    # Wildcard mode treats every callee that is not a known token as an oracle.
    return CalleeClass.ORACLE if book.wildcard_oracle else CalleeClass.UNKNOWN


class SinkKind(enum.Enum):
    STORAGE_WRITE = "storage_write"
    VALUE_TRANSFER = "value_transfer"
    CALL_ARGUMENT = "call_argument"


@dataclass(frozen=True)
class DataFlowFinding:
    source_site: int
    origin: int
    sink_site: int
    sink_kind: SinkKind
    witness_trace: tuple[int, ...]
    callee_class_at_sink: CalleeClass | None = None
    severity: str = "vulnerable"
    note: str | None = None

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.source_site, self.sink_site, self.sink_kind.value)


class Verdict(enum.Enum):
    VULNERABLE = "vulnerable"
    NOT_FOUND = "not_found"
    INCONCLUSIVE = "inconclusive"


@dataclass
class OracleReport:
    program_id: str
    findings: list[DataFlowFinding] = field(default_factory=list)
    info: list[DataFlowFinding] = field(default_factory=list)
    paths: int = 0
    cuts: int = 0

    @property
    def verdict(self) -> Verdict:
        if self.findings:
            return Verdict.VULNERABLE
        return Verdict.INCONCLUSIVE if self.cuts else Verdict.NOT_FOUND


# Reverted and faulted paths roll their state changes back, so sinks on them
# never happen on chain.
_COMMITTING = (Status.STOP, Status.RETURN, Status.CUT)


def _finding(state: MachineState, origin: int, sink_site: int, trace_index: int,
             kind: SinkKind, callee_class: CalleeClass | None,
             severity: str = "vulnerable") -> DataFlowFinding:
    src = state.origin_site(origin)
    note = "delegatecall source" if src.opcode == "DELEGATECALL" else None
    witness = tuple(state.trace[src.trace_index:trace_index + 1])
    return DataFlowFinding(src.site, origin, sink_site, kind, witness,
                           callee_class, severity, note)


def detect_sinks(terminal: MachineState, book: AddressBook | None = None,
                 include_info: bool = False) -> list[DataFlowFinding]:
    """Findings on one explored path, ordered by (sink_site, origin)."""
    if terminal.status not in _COMMITTING:
        return []
    out: list[DataFlowFinding] = []
    for w in terminal.storage_writes:
        for origin in sorted(w.slot.taint | w.value.taint):
            out.append(_finding(terminal, origin, w.site, w.trace_index,
                                SinkKind.STORAGE_WRITE, None))
    for rec in terminal.call_log:
        for origin in sorted(rec.value.taint):
            out.append(_finding(terminal, origin, rec.site, rec.trace_index,
                                SinkKind.VALUE_TRANSFER, rec.classified))
        if not rec.args_tainted:
            continue
        # Data handed to the oracle itself is not a state update.
        if rec.classified is CalleeClass.TOKEN:
            severity = "vulnerable"
        elif rec.classified is CalleeClass.UNKNOWN and include_info:
            severity = "info"
        else:
            continue
        for origin in sorted(rec.args.taint):
            out.append(_finding(terminal, origin, rec.site, rec.trace_index,
                                SinkKind.CALL_ARGUMENT, rec.classified, severity))
    out.sort(key=lambda f: (f.sink_site, f.origin, f.sink_kind.value))
    return out


def program_id(code: bytes) -> str:
    return hashlib.sha256(code).hexdigest()


def _dedupe(findings: Iterable[DataFlowFinding]) -> list[DataFlowFinding]:
    best: dict[tuple[int, int, str], DataFlowFinding] = {}
    for f in findings:
        cur = best.get(f.key)
        if cur is None or (len(f.witness_trace), f.witness_trace) < (
                len(cur.witness_trace), cur.witness_trace):
            best[f.key] = f
    return sorted(best.values(), key=lambda f: (f.sink_site, f.source_site, f.sink_kind.value))


def analyze(bytecode: bytes | Program, book: AddressBook,
            config: ExploreConfig | None = None) -> OracleReport:
    if isinstance(bytecode, Program):
        program = bytecode
    else:
        try:
            program = disassemble(bytecode)
        except UnknownOpcode as exc:
            raise DecodeFailed(exc.offset, str(exc)) from exc
    result = run_exploration(program, config, hooks=book)
    found: list[DataFlowFinding] = []
    for t in result.terminals:
        found.extend(detect_sinks(t, book, include_info=True))
    return OracleReport(
        program_id=program_id(program.code),
        findings=_dedupe(f for f in found if f.severity == "vulnerable"),
        info=_dedupe(f for f in found if f.severity == "info"),
        paths=len(result.terminals),
        cuts=result.cuts,
    )


def _finding_json(f: DataFlowFinding, source_map: Mapping[int, int] | None) -> dict:
    out: dict = {
        "source_site": f.source_site,
        "sink_site": f.sink_site,
        "sink_kind": f.sink_kind.value,
        "origin": f.origin,
        "trace": list(f.witness_trace),
    }
    if f.note:
        out["note"] = f.note
    if source_map:
        if f.source_site in source_map:
            out["source_line"] = source_map[f.source_site]
        if f.sink_site in source_map:
            out["sink_line"] = source_map[f.sink_site]
    return out


def report_dict(report: OracleReport,
                source_map: Mapping[int, int] | None = None) -> dict:
    out = {
        "program_id": report.program_id,
        "verdict": report.verdict.value,
        "findings": [_finding_json(f, source_map) for f in report.findings],
        "stats": {"paths": report.paths, "cuts": report.cuts},
    }
    if report.info:
        out["info"] = [_finding_json(f, source_map) for f in report.info]
    return out


def render_report(report: OracleReport, fmt: str = "json",
                  source_map: Mapping[int, int] | None = None) -> bytes:
    if fmt == "json":
        return (json.dumps(report_dict(report, source_map), indent=2) + "\n").encode()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [
        f"program  {report.program_id}",
        f"verdict  {report.verdict.value}",
        f"paths    {report.paths} explored, {report.cuts} cut",
    ]
    for f in report.findings:
        where = f"0x{f.source_site:04x} -> 0x{f.sink_site:04x}"
        if source_map and f.source_site in source_map and f.sink_site in source_map:
            where += f" (line {source_map[f.source_site]} -> line {source_map[f.sink_site]})"
        lines.append(f"  {f.sink_kind.value:<15} {where}  via {len(f.witness_trace)} instructions")
    for f in report.info:
        lines.append(f"  info: {f.sink_kind.value} 0x{f.source_site:04x} -> 0x{f.sink_site:04x}")
    return ("\n".join(lines) + "\n").encode()
