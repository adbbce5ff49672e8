from defiwatch.evm.asm import (
    BY_NAME,
    OPCODES,
    Instruction,
    Opcode,
    ParseError,
    Program,
    UnknownOpcode,
    assemble,
    decode_instruction,
    disassemble,
    parse_hex,
)
from defiwatch.evm.engine import (
    CalleeClass,
    CallEnv,
    ExploreConfig,
    ExternalCallRecord,
    MachineState,
    Status,
    explore,
    init_state,
    run_exploration,
    step,
)
from defiwatch.evm.feasibility import Verdict, feasible
from defiwatch.evm.values import SymValue, apply, const, evaluate, symbol

__all__ = [
    "BY_NAME", "OPCODES", "Instruction", "Opcode", "ParseError", "Program",
    "UnknownOpcode", "assemble", "decode_instruction", "disassemble", "parse_hex",
    "CallEnv", "CalleeClass", "ExploreConfig", "ExternalCallRecord", "MachineState",
    "Status", "explore", "init_state", "run_exploration", "step",
    "Verdict", "feasible", "SymValue", "apply", "const", "evaluate", "symbol",
]
