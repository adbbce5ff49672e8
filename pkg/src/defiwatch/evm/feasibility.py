"""Cheap path-constraint feasibility: constant folding plus per-term intervals.

This is the default backend behind ``ExploreConfig.feasibility``.  It only
answers INFEASIBLE when the contradiction is certain; anything it cannot model
turns into UNKNOWN, which the explorer treats as feasible.
"""

from __future__ import annotations

import enum

from defiwatch.evm.asm import WORD_MASK
from defiwatch.evm.values import CONST, SYM, SymValue, arith

# Largest interval we enumerate when checking excluded points.
_ENUM_LIMIT = 4096


class Verdict(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNKNOWN = "unknown"


class _Contradiction(Exception):
    pass


class _Domain:
    """Interval [lo, hi] minus a finite set of excluded points."""

    __slots__ = ("lo", "hi", "excluded")

    def __init__(self) -> None:
        self.lo = 0
        self.hi = WORD_MASK
        self.excluded: set[int] = set()

    def at_least(self, v: int) -> None:
        self.lo = max(self.lo, v)
        self._check()

    def at_most(self, v: int) -> None:
        self.hi = min(self.hi, v)
        self._check()

    def exclude(self, v: int) -> None:
        self.excluded.add(v)
        self._check()

    def pinned(self) -> int | None:
        self._check()
        live = self._live()
        if live is not None and len(live) == 1:
            return live[0]
        return None

    def _live(self) -> list[int] | None:
        if self.hi - self.lo + 1 > _ENUM_LIMIT:
            return None
        return [v for v in range(self.lo, self.hi + 1) if v not in self.excluded]

    def _check(self) -> None:
        if self.lo > self.hi:
            raise _Contradiction
        if self.hi - self.lo + 1 <= len(self.excluded):
            live = self._live()
            if live is not None and not live:
                raise _Contradiction


def _substitute(v: SymValue, pins: dict[SymValue, int],
                memo: dict[int, SymValue]) -> SymValue:
    """Replace pinned terms by constants and fold what becomes concrete."""
    key = id(v)
    if key in memo:
        return memo[key]
    if v.op in (CONST, SYM) or not v.args or v.op in ("BYTES", "SHA3", "CALLDATALOAD"):
        out = v
    else:
        args = tuple(_substitute(a, pins, memo) for a in v.args)
        if all(a.op == CONST for a in args):
            out = SymValue(CONST, value=arith(v.op, [a.value for a in args]))  # type: ignore[misc]
        else:
            out = SymValue(v.op, args)
    if v in pins:
        # A pinned term whose operands fold to something else is a conflict.
        if out.op == CONST and out.value != pins[v]:
            raise _Contradiction
        out = SymValue(CONST, value=pins[v])
    memo[key] = out
    return out


def _assert(term: SymValue, truth: bool, domains: dict[SymValue, _Domain],
            opaque: list[bool]) -> None:
    """Record ``term != 0`` (truth) or ``term == 0`` into ``domains``."""
    if term.op == CONST:
        if bool(term.value) != truth:
            raise _Contradiction
        return
    if term.op == "ISZERO":
        _assert(term.args[0], not truth, domains, opaque)
        return
    if term.op in ("EQ", "LT", "GT"):
        a, b = term.args
        if a.op == CONST and b.op != CONST:
            # Normalize to ``var <op'> const``.
            flipped = {"EQ": "EQ", "LT": "GT", "GT": "LT"}[term.op]
            _compare(flipped, b, a.value, truth, domains, opaque)  # type: ignore[arg-type]
            return
        if b.op == CONST and a.op != CONST:
            _compare(term.op, a, b.value, truth, domains, opaque)  # type: ignore[arg-type]
            return
        if a == b:
            # x == x is always 1; x < x and x > x always 0.
            _assert(SymValue(CONST, value=int(term.op == "EQ")), truth, domains, opaque)
            return
    d = _domain(term, domains, opaque)
    if truth:
        d.exclude(0)
    else:
        d.at_most(0)


def _compare(op: str, var: SymValue, c: int, truth: bool,
             domains: dict[SymValue, _Domain], opaque: list[bool]) -> None:
    d = _domain(var, domains, opaque)
    if op == "EQ":
        if truth:
            d.at_least(c)
            d.at_most(c)
        else:
            d.exclude(c)
    elif op == "LT":  # var < c
        if truth:
            if c == 0:
                raise _Contradiction
            d.at_most(c - 1)
        else:
            d.at_least(c)
    else:  # var > c
        if truth:
            if c == WORD_MASK:
                raise _Contradiction
            d.at_least(c + 1)
        else:
            d.at_most(c)


def _domain(term: SymValue, domains: dict[SymValue, _Domain],
            opaque: list[bool]) -> _Domain:
    if term.op != SYM:
        # Distinct compound terms may be correlated, so a clean result on
        # them cannot be reported as FEASIBLE.
        opaque[0] = True
    d = domains.get(term)
    if d is None:
        d = domains[term] = _Domain()
        if term.op in ("LT", "GT", "EQ", "ISZERO"):
            d.at_most(1)
    return d


def feasible(constraints: list[tuple[SymValue, bool]]) -> Verdict:
    pins: dict[SymValue, int] = {}
    opaque = [False]
    for _ in range(4):
        memo: dict[int, SymValue] = {}
        domains: dict[SymValue, _Domain] = {}
        try:
            for term, truth in constraints:
                _assert(_substitute(term, pins, memo), truth, domains, opaque)
            new_pins = dict(pins)
            for term, d in domains.items():
                v = d.pinned()
                if v is not None:
                    new_pins[term] = v
        except _Contradiction:
            return Verdict.INFEASIBLE
        if new_pins == pins:
            break
        pins = new_pins
    return Verdict.UNKNOWN if opaque[0] else Verdict.FEASIBLE
