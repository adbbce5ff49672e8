from __future__ import annotations

from pathlib import Path

import pytest

from defiwatch.evm import assemble, disassemble
from defiwatch.oracle import AddressBook
from defiwatch.txmodel import Valuation, load_dataset

FIXTURES = Path(__file__).parent / "fixtures"
BYTECODE = FIXTURES / "bytecode"

ORACLE = "0x000000000000000000000000000000000000c0de"
TOKEN = "0x0000000000000000000000000000000000000da1"


def asm(name: str) -> str:
    return (BYTECODE / f"{name}.asm").read_text()


def code_of(name: str) -> bytes:
    return assemble(asm(name))


def program_of(name: str):
    return disassemble(code_of(name))


@pytest.fixture
def book() -> AddressBook:
    return AddressBook.of([ORACLE], [TOKEN])


@pytest.fixture
def valuation() -> Valuation:
    return Valuation({TOKEN: (2, 1)})


@pytest.fixture
def attack1():
    with open(FIXTURES / "attack1.jsonl") as fh:
        return load_dataset(fh)


@pytest.fixture
def config_path() -> Path:
    return FIXTURES / "config.yaml"
