from __future__ import annotations

import json

import pytest
from concrete_evm import Inputs, run
from conftest import ORACLE, TOKEN, asm, code_of, program_of

from defiwatch.evm import (
    CalleeClass,
    ExploreConfig,
    assemble,
    const,
    disassemble,
    explore,
    symbol,
)
from defiwatch.oracle import (
    AddressBook,
    ConfigError,
    DecodeFailed,
    OracleReport,
    SinkKind,
    Verdict,
    analyze,
    classify_callee,
    detect_sinks,
    normalize_address,
    render_report,
)

POSITIVE = {"f_emn": SinkKind.CALL_ARGUMENT, "f_store": SinkKind.STORAGE_WRITE,
            "f_branch": SinkKind.STORAGE_WRITE, "f_value": SinkKind.VALUE_TRANSFER}
NEGATIVE = ["f_pop", "f_indep", "f_nocall"]


# -- classification ---------------------------------------------------------------

def test_classify_callee_examples(book):
    assert classify_callee(const(normalize_address(ORACLE)), book) is CalleeClass.ORACLE
    assert classify_callee(const(normalize_address(TOKEN)), book) is CalleeClass.TOKEN
    assert classify_callee(symbol("x"), book) is CalleeClass.UNKNOWN
    assert classify_callee(const(0xB), book) is CalleeClass.UNKNOWN


def test_wildcard_treats_non_tokens_as_oracles():
    book = AddressBook.of([], [TOKEN], wildcard_oracle=True)
    assert classify_callee(symbol("x"), book) is CalleeClass.ORACLE
    assert classify_callee(const(0xB), book) is CalleeClass.ORACLE
    assert classify_callee(const(normalize_address(TOKEN)), book) is CalleeClass.TOKEN


def test_overlapping_book_is_rejected():
    with pytest.raises(ConfigError):
        AddressBook.of([ORACLE], [ORACLE.upper().replace("0X", "0x")])


# -- sinks ------------------------------------------------------------------------

def _sinks(name, book):
    return [f for t in explore(program_of(name), hooks=book) for f in detect_sinks(t, book)]


def test_detect_sinks_emn(book):
    (f,) = _sinks("f_emn", book)
    assert f.sink_kind is SinkKind.CALL_ARGUMENT
    assert (f.source_site, f.sink_site, f.origin) == (0x3B, 0x94, 0)
    assert f.callee_class_at_sink is CalleeClass.TOKEN


def test_detect_sinks_pop(book):
    assert _sinks("f_pop", book) == []


def test_detect_sinks_store(book):
    (f,) = _sinks("f_store", book)
    assert f.sink_kind is SinkKind.STORAGE_WRITE
    assert f.witness_trace == (32, 33, 34, 36, 37, 39)


def test_reverting_paths_have_no_sinks(book):
    # Same flow as F-STORE, but the path reverts after the write.
    reverting = asm("f_store").replace("STOP", "PUSH1 0\nDUP1\nREVERT")
    prog = disassemble(assemble(reverting))
    assert [f for t in explore(prog, hooks=book) for f in detect_sinks(t, book)] == []


# -- analyze ----------------------------------------------------------------------

def test_analyze_emn_matches_hand_trace(book):
    report = analyze(code_of("f_emn"), book)
    assert report.verdict is Verdict.VULNERABLE
    (f,) = report.findings
    assert f.sink_kind is SinkKind.CALL_ARGUMENT
    # Hand simulation: both JUMPIs fall through, so the witness is every
    # instruction from the STATICCALL to the token CALL.
    listing = [i.offset for i in program_of("f_emn").instructions]
    expected = tuple(o for o in listing if 0x3B <= o <= 0x94)
    assert f.witness_trace == expected and len(expected) == 36
    assert (report.paths, report.cuts) == (3, 0)


@pytest.mark.parametrize("name", NEGATIVE)
def test_negative_fixtures(name, book):
    report = analyze(code_of(name), book)
    assert report.findings == [] and report.verdict is Verdict.NOT_FOUND


@pytest.mark.parametrize("name, kind", sorted(POSITIVE.items()))
def test_positive_fixtures(name, kind, book):
    report = analyze(code_of(name), book)
    assert report.verdict is Verdict.VULNERABLE
    assert [f.sink_kind for f in report.findings] == [kind]


def test_branch_witness_includes_the_branch(book):
    (f,) = analyze(code_of("f_branch"), book).findings
    jumpi = next(i.offset for i in program_of("f_branch").instructions if i.mnemonic == "JUMPI")
    assert jumpi in f.witness_trace
    assert f.witness_trace[0] == f.source_site and f.witness_trace[-1] == f.sink_site


def test_loop_is_inconclusive(book):
    report = analyze(code_of("f_loop"), book, ExploreConfig(loop_bound=2))
    assert report.verdict is Verdict.INCONCLUSIVE and report.cuts == 1


def test_undecodable_bytecode():
    with pytest.raises(DecodeFailed) as exc:
        analyze(bytes.fromhex("6001fe"), AddressBook())
    assert exc.value.offset == 2


def test_unknown_callee_argument_is_info_only():
    book = AddressBook.of([ORACLE], [])  # DAI no longer a known token
    report = analyze(code_of("f_emn"), book)
    assert report.findings == [] and report.verdict is Verdict.NOT_FOUND
    assert [f.sink_kind for f in report.info] == [SinkKind.CALL_ARGUMENT]


# -- rendering --------------------------------------------------------------------

def test_render_empty_report():
    doc = json.loads(render_report(OracleReport(program_id="00")))
    assert doc["findings"] == [] and doc["verdict"] == "not_found"
    assert doc["stats"] == {"paths": 0, "cuts": 0}


def test_render_emn_report(book):
    report = analyze(code_of("f_emn"), book)
    out = render_report(report)
    assert out == render_report(report)
    (f,) = json.loads(out)["findings"]
    assert set(f) == {"source_site", "sink_site", "sink_kind", "origin", "trace"}
    assert f["sink_kind"] == "call_argument"
    text = render_report(report, "text").decode()
    assert "vulnerable" in text and "call_argument" in text


def test_source_map_annotations(book):
    report = analyze(code_of("f_emn"), book)
    (f,) = json.loads(render_report(report, source_map={0x3B: 154, 0x94: 242}))["findings"]
    assert (f["source_line"], f["sink_line"]) == (154, 242)


# -- properties -------------------------------------------------------------------

ALL = sorted(POSITIVE) + NEGATIVE + ["f_loop"]


@pytest.mark.parametrize("name", ALL)
def test_enlarging_oracles_never_removes_findings(name, book):
    before = {f.key for f in analyze(code_of(name), book).findings}
    bigger = AddressBook(book.oracles | {0xBEEF, 0x1234}, book.tokens)
    after = {f.key for f in analyze(code_of(name), bigger).findings}
    assert before <= after


@pytest.mark.parametrize("name", ALL)
def test_analysis_is_idempotent(name, book):
    assert render_report(analyze(code_of(name), book)) == render_report(analyze(code_of(name), book))


def _candidate_inputs():
    for fill in (0, 1, 0xFF):
        yield Inputs(calldata=bytes([fill]) * 68, caller=0xCA11,
                     call_result=lambda k: (1, (7).to_bytes(32, "big") * 2))


@pytest.mark.parametrize("name", sorted(POSITIVE))
def test_witness_replays_concretely(name, book):
    code = code_of(name)
    for f in analyze(code, book).findings:
        w = list(f.witness_trace)
        replayed = False
        for inputs in _candidate_inputs():
            r = run(code, inputs)
            if r.status in ("stop", "return") and any(
                    r.trace[i:i + len(w)] == w for i in range(len(r.trace))):
                replayed = True
                break
        assert replayed, name
