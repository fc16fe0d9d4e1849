"""Two-tape deterministic Turing machines.

Machines have a read-only input tape (tape 1) and a work tape (tape 2).
Instructions are three-operand: on (state, sym1, sym2) the machine moves
head 1, writes a symbol under head 2, moves head 2, and changes state.
The direct simulator here is the brute-force oracle every formula claim
is checked against.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

BLANK = 0   # Λ, rendered "_"
START = 1   # ▷, rendered ">"
ZERO = 2
ONE = 3

MOVES = ("L", "R", "S")

ALPHABET_PREFIX = ("_", ">", "0", "1")


class MachineError(Exception):
    pass


class BadAlphabetPrefix(MachineError):
    pass


class DuplicateInstructionKey(MachineError):
    pass


class LeftEdgeEscape(MachineError):
    pass


class StartSymbolWrite(MachineError):
    pass


class NoMatchingInstruction(MachineError):
    pass


class BadInput(MachineError):
    pass


@dataclass(frozen=True, order=True)
class Instruction:
    state: int
    read1: int
    read2: int
    next_state: int
    move1: str
    write2: int
    move2: str

    @property
    def key(self) -> Tuple[int, int, int]:
        return (self.state, self.read1, self.read2)


@dataclass(frozen=True)
class MachineProgram:
    alphabet: Tuple[str, ...]
    state_count: int
    instructions: Tuple[Instruction, ...]

    def instruction_table(self) -> Dict[Tuple[int, int, int], Instruction]:
        return {ins.key: ins for ins in self.instructions}

    def symbol_index(self, name: str) -> int:
        return self.alphabet.index(name)


@dataclass(frozen=True)
class Configuration:
    state: int
    head1: int
    head2: int
    tape1: Tuple[int, ...]
    tape2: Tuple[int, ...]

    def read1(self) -> int:
        return tape_read(self.tape1, self.head1)

    def read2(self) -> int:
        return tape_read(self.tape2, self.head2)


@dataclass(frozen=True)
class SimResult:
    outcome: str  # accepted | rejected | budget_exhausted
    steps_used: int
    max_head2: int

    @property
    def accepted(self) -> bool:
        return self.outcome == "accepted"


def tape_read(tape: Sequence[int], pos: int) -> int:
    """Cells beyond the materialized frontier read as blank."""
    if pos < 0:
        raise MachineError(f"negative tape position {pos}")
    return tape[pos] if pos < len(tape) else BLANK


def code_width(program: MachineProgram) -> int:
    """Smallest r with 2^(r+1) >= |alphabet| + state count."""
    need = len(program.alphabet) + program.state_count
    r = 0
    while (1 << (r + 1)) < need:
        r += 1
    return r


# ---------------------------------------------------------------------------
# validation and normalization

def _check_instruction(program: MachineProgram, ins: Instruction):
    a = len(program.alphabet)
    if not (0 <= ins.state < program.state_count
            and 0 <= ins.next_state < program.state_count):
        raise MachineError(f"state out of range in {ins}")
    if not (0 <= ins.read1 < a and 0 <= ins.read2 < a and 0 <= ins.write2 < a):
        raise MachineError(f"symbol out of range in {ins}")
    if ins.move1 not in MOVES or ins.move2 not in MOVES:
        raise MachineError(f"bad move in {ins}")
    if ins.read1 == START and ins.move1 == "L":
        raise LeftEdgeEscape(f"{ins} moves head 1 left off the start symbol")
    if ins.read2 == START and ins.move2 == "L":
        raise LeftEdgeEscape(f"{ins} moves head 2 left off the start symbol")
    # The start symbol can be neither erased nor written over anything else.
    if ins.read2 == START and ins.write2 != START:
        raise StartSymbolWrite(f"{ins} erases the start symbol")
    if ins.write2 == START and ins.read2 != START:
        raise StartSymbolWrite(f"{ins} writes the start symbol over another cell")


def idle_instructions(program: MachineProgram) -> List[Instruction]:
    """Self-loop instructions for the accept and reject states, all symbol pairs."""
    out = []
    for state in (1, 2):
        for a1 in range(len(program.alphabet)):
            for a2 in range(len(program.alphabet)):
                out.append(Instruction(state, a1, a2, state, "S", a2, "S"))
    return out


def validate_and_normalize(program: MachineProgram) -> MachineProgram:
    """Check the machine conventions and complete the instruction set.

    Adds the idle-run self-loops for states 1 and 2 and patches hanging
    states (targets of some instruction, other than start/accept/reject,
    with incomplete symbol-pair coverage) with self-loop instructions.
    Idempotent: a normalized program passes through unchanged.
    """
    if tuple(program.alphabet[:4]) != ALPHABET_PREFIX or len(program.alphabet) < 4:
        raise BadAlphabetPrefix(
            f"alphabet must start with {ALPHABET_PREFIX}, got {program.alphabet[:4]}")
    if len(set(program.alphabet)) != len(program.alphabet):
        raise BadAlphabetPrefix("duplicate symbol names")
    if program.state_count < 3:
        raise MachineError("need at least start, accept, and reject states")

    for ins in program.instructions:
        _check_instruction(program, ins)

    table: Dict[Tuple[int, int, int], Instruction] = {}
    for ins in program.instructions:
        if ins.key in table:
            raise DuplicateInstructionKey(f"duplicate instruction for {ins.key}")
        table[ins.key] = ins

    a = len(program.alphabet)
    extra: List[Instruction] = []
    for ins in idle_instructions(program):
        existing = table.get(ins.key)
        if existing is None:
            extra.append(ins)
            table[ins.key] = ins
        elif existing != ins:
            raise DuplicateInstructionKey(
                f"state {ins.state} carries a non-idle instruction {existing}")

    # Hanging states: reachable as a target, not fully covered.
    targets = {ins.next_state for ins in program.instructions}
    for state in sorted(targets):
        if state in (0, 1, 2):
            continue
        for a1 in range(a):
            for a2 in range(a):
                key = (state, a1, a2)
                if key not in table:
                    patch = Instruction(state, a1, a2, state, "S", a2, "S")
                    table[key] = patch
                    extra.append(patch)

    return replace(program, instructions=tuple(program.instructions) + tuple(extra))


# ---------------------------------------------------------------------------
# simulation

def initial_configuration(program: MachineProgram, input_str: str) -> Configuration:
    symbols = validate_input(program, input_str)
    return Configuration(
        state=0, head1=0, head2=0,
        tape1=(START,) + symbols,
        tape2=(START,))


def validate_input(program: MachineProgram, input_str: str) -> Tuple[int, ...]:
    if not input_str:
        raise BadInput("input must be non-empty")
    symbols = []
    for ch in input_str:
        if ch not in program.alphabet:
            raise BadInput(f"symbol {ch!r} not in alphabet")
        idx = program.symbol_index(ch)
        if idx in (BLANK, START):
            raise BadInput(f"input may not contain {ch!r}")
        symbols.append(idx)
    return tuple(symbols)


def step(program: MachineProgram, config: Configuration,
         table: Optional[Dict[Tuple[int, int, int], Instruction]] = None) -> Configuration:
    if table is None:
        table = program.instruction_table()
    key = (config.state, config.read1(), config.read2())
    ins = table.get(key)
    if ins is None:
        raise NoMatchingInstruction(f"no instruction for {key}")

    tape2 = config.tape2
    if ins.write2 != config.read2():
        cells = list(tape2)
        if config.head2 >= len(cells):
            cells.extend([BLANK] * (config.head2 - len(cells) + 1))
        cells[config.head2] = ins.write2
        tape2 = tuple(cells)

    delta = {"L": -1, "R": 1, "S": 0}
    head1 = config.head1 + delta[ins.move1]
    head2 = config.head2 + delta[ins.move2]
    assert head1 >= 0 and head2 >= 0, "left edge escape on a validated program"
    return Configuration(ins.next_state, head1, head2, config.tape1, tape2)


def simulate(program: MachineProgram, input_str: str, budget: int) -> SimResult:
    if budget < 1:
        raise MachineError("budget must be at least 1")
    table = program.instruction_table()
    config = initial_configuration(program, input_str)
    max_head2 = config.head2
    for used in range(1, budget + 1):
        config = step(program, config, table)
        max_head2 = max(max_head2, config.head2)
        if config.state == 1:
            return SimResult("accepted", used, max_head2)
        if config.state == 2:
            return SimResult("rejected", used, max_head2)
    return SimResult("budget_exhausted", budget, max_head2)


def run_trace(program: MachineProgram, input_str: str, steps: int) -> List[Configuration]:
    """Configurations C(0)..C(steps); absorbing once accept/reject is reached."""
    table = program.instruction_table()
    config = initial_configuration(program, input_str)
    trace = [config]
    for _ in range(steps):
        config = step(program, config, table)
        trace.append(config)
    return trace


# ---------------------------------------------------------------------------
# serialization (one instruction per line)

def _symbol_text(program: MachineProgram, sym: int, width: int) -> str:
    if sym == START:
        return "(" + format(START, f"0{width}b") + ")"
    return program.alphabet[sym]


def serialize_program(program: MachineProgram) -> str:
    """Deterministic textual rendering with the start symbol as a bit code."""
    width = code_width(program) + 1
    lines = []
    for ins in program.instructions:
        lines.append(
            f"q{ins.state},{_symbol_text(program, ins.read1, width)},"
            f"{_symbol_text(program, ins.read2, width)}"
            f"→q{ins.next_state},{ins.move1},"
            f"{_symbol_text(program, ins.write2, width)},{ins.move2}")
    return "\n".join(lines) + "\n"


def parse_serialized(text: str, alphabet: Sequence[str], state_count: int) -> MachineProgram:
    """Inverse of serialize_program for a known alphabet and state count."""
    def symbol_of(token: str) -> int:
        if token.startswith("(") and token.endswith(")"):
            value = int(token[1:-1], 2)
            if value != START:
                raise MachineError(f"unexpected coded symbol {token}")
            return START
        return list(alphabet).index(token)

    instructions = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        lhs, rhs = line.split("→")
        state_txt, sym1, sym2 = lhs.split(",")
        next_txt, move1, write2, move2 = rhs.split(",")
        instructions.append(Instruction(
            state=int(state_txt[1:]), read1=symbol_of(sym1), read2=symbol_of(sym2),
            next_state=int(next_txt[1:]), move1=move1,
            write2=symbol_of(write2), move2=move2))
    return MachineProgram(tuple(alphabet), state_count, tuple(instructions))


# ---------------------------------------------------------------------------
# machine text files

_HEADER_ALPHABET = re.compile(r"^alphabet:\s*(.+)$")
_HEADER_STATES = re.compile(r"^states:\s*(\d+)$")
_INSTR = re.compile(
    r"^q(\d+)\s+(\S+)\s+(\S+)\s*->\s*q(\d+)\s+([LRS])\s+(\S+)\s+([LRS])$")


def parse_machine_text(text: str) -> MachineProgram:
    """Parse the machine file format; returns the raw (un-normalized) program."""
    alphabet: Optional[Tuple[str, ...]] = None
    state_count: Optional[int] = None
    instructions: List[Instruction] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER_ALPHABET.match(line)
        if m:
            alphabet = tuple(m.group(1).split())
            continue
        m = _HEADER_STATES.match(line)
        if m:
            state_count = int(m.group(1))
            continue
        m = _INSTR.match(line)
        if not m:
            raise MachineError(f"line {lineno}: cannot parse {raw!r}")
        if alphabet is None or state_count is None:
            raise MachineError(f"line {lineno}: instruction before headers")
        names = list(alphabet)

        def sym(tok: str) -> int:
            if tok not in names:
                raise MachineError(f"line {lineno}: unknown symbol {tok!r}")
            return names.index(tok)

        instructions.append(Instruction(
            state=int(m.group(1)), read1=sym(m.group(2)), read2=sym(m.group(3)),
            next_state=int(m.group(4)), move1=m.group(5),
            write2=sym(m.group(6)), move2=m.group(7)))

    if alphabet is None or state_count is None:
        raise MachineError("missing alphabet or states header")
    return MachineProgram(alphabet, state_count, tuple(instructions))


def load_machine(path) -> MachineProgram:
    """Parse and normalize a machine file."""
    with open(path, "r", encoding="utf-8") as fh:
        return validate_and_normalize(parse_machine_text(fh.read()))
