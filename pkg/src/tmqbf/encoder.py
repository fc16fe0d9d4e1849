"""Builders for the formulas that model two-tape machine computations.

Everything here is a pure function from machine data to formula trees:
binary increment/decrement corrections, cell clauses, timers, per-instruction
formulas, the one-step conjunction, the doubling ladder, configuration
descriptions, initial/final conditions, the full modeling sentence, and the
input-independent conditional variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .formula_ast import (
    FALSE, TRUE, And, BitTuple, Const, Equiv, Exists, Forall, Formula, Implies,
    Not, Or, Var, VarId, Xor, WidthMismatch, conj, disj, lex_ge, lex_greater,
    natural_length, rename_vars, tuple_equiv,
)
from .tm_core import (
    BLANK, START, Configuration, Instruction, MachineProgram, code_width,
    tape_read,
)


class EncoderError(Exception):
    pass


class MTooSmall(EncoderError):
    pass


class InputTooShort(EncoderError):
    pass


class IndexOutOfRange(EncoderError):
    pass


class LevelTooDeep(EncoderError):
    pass


class TooLargeToMaterialize(EncoderError):
    pass


class LengthMismatch(EncoderError):
    pass


def ceil_log2(value: int) -> int:
    if value < 1:
        raise ValueError("ceil_log2 needs a positive argument")
    return (value - 1).bit_length()


# Order of the tuple roles inside a flattened configuration tuple.
# (kind, colored?, width-selector), matching the paper's listing order.
_ROLES = ("q", "X", "x", "Z", "z", "D", "d", "F", "f")


@dataclass(frozen=True)
class EncodingParams:
    """All derived encoder quantities for one (program, n, m) choice."""

    program: MachineProgram
    n: int
    s: int
    m: int
    T: int
    r: int
    N: int
    alphabet_size: int
    symbol_codes: Tuple[BitTuple, ...]
    psi_config_cap: int = 64

    # -- widths ------------------------------------------------------------
    @property
    def w1(self) -> int:
        return self.s + 1   # tape-1 addresses

    @property
    def w2(self) -> int:
        return self.m + 1   # tape-2 addresses

    @property
    def wc(self) -> int:
        return self.r + 1   # symbol and state codes

    @property
    def tuple_width(self) -> int:
        return 2 * self.w2 + 2 * self.w1 + 5 * self.wc

    def role_widths(self) -> List[Tuple[str, int]]:
        w = {"q": self.wc, "X": self.w1, "x": self.w2, "Z": self.w1,
             "z": self.w2, "D": self.wc, "d": self.wc, "F": self.wc,
             "f": self.wc}
        return [(role, w[role]) for role in _ROLES]

    # -- variable tuples ---------------------------------------------------
    def vt(self, kind: str, first: int, width: int) -> List[Formula]:
        return [Var(VarId(kind, (first, i))) for i in range(width)]

    def xs(self, t: int) -> List[Formula]:
        return self.vt("x", t, self.w2)

    def zs(self, t: int) -> List[Formula]:
        return self.vt("z", t, self.w2)

    def Zs(self, t: int) -> List[Formula]:
        return self.vt("Z", t, self.w1)

    def qs(self, t: int) -> List[Formula]:
        return self.vt("q", t, self.wc)

    def fs(self, t: int) -> List[Formula]:
        return self.vt("f", t, self.wc)

    def Ds(self, t: int) -> List[Formula]:
        return self.vt("D", t, self.wc)

    def ds(self, t: int) -> List[Formula]:
        return self.vt("d", t, self.wc)

    def Xs(self) -> List[Formula]:
        return [Var(VarId("X", (i,))) for i in range(self.w1)]

    def Fs(self) -> List[Formula]:
        return [Var(VarId("F", (i,))) for i in range(self.wc)]

    def y_tuple(self, t: int) -> List[Formula]:
        """The flattened configuration tuple of color t (X,F are colorless)."""
        parts = {"q": self.qs(t), "X": self.Xs(), "x": self.xs(t),
                 "Z": self.Zs(t), "z": self.zs(t), "D": self.Ds(t),
                 "d": self.ds(t), "F": self.Fs(), "f": self.fs(t)}
        out: List[Formula] = []
        for role, _ in self.role_widths():
            out.extend(parts[role])
        return out

    def level_tuple(self, kind: str, level: int) -> List[Formula]:
        return self.vt(kind, level, self.tuple_width)

    # -- codes ---------------------------------------------------------------
    def code(self, symbol: int) -> BitTuple:
        return self.symbol_codes[symbol]

    def state_code(self, state: int) -> BitTuple:
        return BitTuple.from_int(state, self.wc)

    def addr1(self, cell: int) -> BitTuple:
        return BitTuple.from_int(cell, self.w1)

    def addr2(self, cell: int) -> BitTuple:
        return BitTuple.from_int(cell, self.w2)


def make_params(program: MachineProgram, n: int, m: int,
                psi_config_cap: int = 64) -> EncodingParams:
    if n < 2:
        raise InputTooShort(f"need n >= 2, got {n}")
    s = ceil_log2(n)
    if m < s:
        raise MTooSmall(f"need m >= ceil(log n) = {s}, got {m}")
    r = code_width(program)
    alphabet_size = len(program.alphabet)
    codes = tuple(BitTuple.from_int(i, r + 1) for i in range(alphabet_size))
    return EncodingParams(
        program=program, n=n, s=s, m=m, T=1 << m, r=r,
        N=len(program.instructions), alphabet_size=alphabet_size,
        symbol_codes=codes, psi_config_cap=psi_config_cap)


# ---------------------------------------------------------------------------
# binary +-1 corrections

def kappa_shift(direction: str, value_tuple: Sequence[Formula],
                correction_tuple: Sequence[Formula]) -> Formula:
    """Correction system for moving a head: R computes t+1, L computes t-1,
    S forces the all-zero correction."""
    gamma = list(value_tuple)
    v = list(correction_tuple)
    if len(gamma) != len(v):
        raise WidthMismatch(f"widths differ: {len(gamma)} vs {len(v)}")
    if direction == "S":
        return tuple_equiv(v, [FALSE] * len(v))
    if direction not in ("R", "L"):
        raise EncoderError(f"bad direction {direction!r}")
    s = len(v) - 1
    parts: List[Formula] = [Equiv(v[s], TRUE)]
    if s >= 1:
        prev = gamma[s] if direction == "R" else Not(gamma[s])
        parts.append(Equiv(v[s - 1], prev))
        for i in range(s - 2, -1, -1):
            g = gamma[i + 1] if direction == "R" else Not(gamma[i + 1])
            parts.append(Equiv(v[i], And((g, v[i + 1]))))
    return conj(parts)


def xor_tuple(lhs: Sequence[Formula], rhs: Sequence[Formula]) -> List[Formula]:
    if len(lhs) != len(rhs):
        raise WidthMismatch(f"widths differ: {len(lhs)} vs {len(rhs)}")
    return [Xor(a, b) for a, b in zip(lhs, rhs)]


# ---------------------------------------------------------------------------
# clauses and timers

PayloadLike = Union[int, BitTuple, Sequence[Formula]]


def _payload(params: EncodingParams, payload: PayloadLike) -> Union[BitTuple, Sequence[Formula]]:
    if isinstance(payload, int):
        return params.code(payload)
    return payload


def clause_psi1(params: EncodingParams, cell: Union[BitTuple, Sequence[Formula]],
                payload: PayloadLike) -> Formula:
    """Tape-1 cell clause: if the address probe equals `cell`, the symbol
    probe equals `payload`."""
    return Implies(tuple_equiv(params.Xs(), cell),
                   tuple_equiv(params.Fs(), _payload(params, payload)))


def clause_psi2(params: EncodingParams, t: int,
                cell: Union[BitTuple, Sequence[Formula]],
                payload: PayloadLike) -> Formula:
    """Tape-2 cell clause of color t."""
    return Implies(tuple_equiv(params.xs(t), cell),
                   tuple_equiv(params.fs(t), _payload(params, payload)))


def timer_pi(params: EncodingParams, t: int, state: Union[int, BitTuple],
             code1: PayloadLike, code2: PayloadLike,
             cell1: Union[BitTuple, Sequence[Formula]],
             cell2: Union[BitTuple, Sequence[Formula]]) -> Formula:
    """The color-t timer: state, both scanned symbols, both head addresses."""
    state_bits = params.state_code(state) if isinstance(state, int) else state
    return conj([
        tuple_equiv(params.qs(t), state_bits),
        tuple_equiv(params.Ds(t), _payload(params, code1)),
        tuple_equiv(params.ds(t), _payload(params, code2)),
        tuple_equiv(params.Zs(t), cell1),
        tuple_equiv(params.zs(t), cell2),
    ])


# ---------------------------------------------------------------------------
# instruction formulas

COP_VARIANTS = ("disjunction", "exists_g")


def phi_instruction(params: EncodingParams, k: int, t: int,
                    cop_variant: str = "disjunction") -> Formula:
    """Formula describing the actions of the k-th instruction at step t+1.

    k is 1-based; the auxiliary tuples carry k as their first index.
    """
    if not (1 <= k <= params.N):
        raise IndexOutOfRange(f"instruction index {k} not in [1, {params.N}]")
    if cop_variant not in COP_VARIANTS:
        raise EncoderError(f"unknown cop variant {cop_variant!r}")
    ins = params.program.instructions[k - 1]

    u = params.vt("u", k, params.w2)
    U = params.vt("U", k, params.w1)
    v = params.vt("v", k, params.w2)
    V = params.vt("V", k, params.w1)
    h = params.vt("h", k, params.wc)
    H = params.vt("H", k, params.wc)
    w = params.vt("w", k, params.w2)
    g = params.vt("g", k, params.wc)

    post1 = xor_tuple(U, V)
    post2 = xor_tuple(u, v)

    premise = [
        timer_pi(params, t, ins.state, ins.read1, ins.read2, U, u),
        kappa_shift(ins.move1, U, V),
        kappa_shift(ins.move2, u, v),
        clause_psi1(params, post1, H),                    # retrieval on tape 1
        (tuple_equiv(h, params.code(ins.write2))          # retrieval on tape 2
         if ins.move2 == "S" else clause_psi2(params, t, post2, h)),
    ]

    copy_body_t = clause_psi2(params, t, w, g)
    copy_body_t1 = clause_psi2(params, t + 1, w, g)
    not_written = Not(tuple_equiv(w, u))
    if cop_variant == "exists_g":
        delta_cop = Forall([f.vid for f in w], Implies(
            not_written,
            Exists([f.vid for f in g], And((copy_body_t, copy_body_t1)))))
    else:
        disjuncts = []
        for rho in range(params.alphabet_size):
            code = params.code(rho)
            body = And((clause_psi2(params, t, w, code),
                        clause_psi2(params, t + 1, w, code)))
            disjuncts.append(Implies(not_written, body))
        delta_cop = Forall([f.vid for f in w], disj(disjuncts))

    delta_wr = clause_psi2(params, t + 1, u, ins.write2)
    conclusion = conj([
        delta_cop,
        delta_wr,
        timer_pi(params, t + 1, ins.next_state, H, h, post1, post2),
    ])

    bound = [f.vid for f in u + U + v + V + h + H]
    return Forall(bound, Implies(conj(premise), conclusion))


def phi_step0(params: EncodingParams, t: int = 0,
              cop_variant: str = "disjunction") -> Formula:
    """One running step: the conjunction over all instructions."""
    return conj([phi_instruction(params, k, t, cop_variant)
                 for k in range(1, params.N + 1)])


# ---------------------------------------------------------------------------
# doubling

def _rename_to_level(params: EncodingParams, formula: Formula,
                     lo_color: int, hi_color: int, level: int) -> Formula:
    """Map the free configuration tuples of colors lo/hi onto the level's
    a/b tuples.  The colorless tape-1 probes go to the a-side."""
    mapping: Dict[VarId, VarId] = {}
    lo = params.y_tuple(lo_color)
    hi = params.y_tuple(hi_color)
    a = params.level_tuple("a", level)
    b = params.level_tuple("b", level)
    for i, var in enumerate(lo):
        mapping[var.vid] = a[i].vid
    for i, var in enumerate(hi):
        vid = var.vid
        if vid.kind in ("X", "F"):
            continue  # shared with the lo tuple; already mapped to the a-side
        mapping[vid] = b[i].vid
    return rename_vars(formula, mapping)


def theta_guard(params: EncodingParams, level: int,
                outer_lo: Sequence[Formula], outer_hi: Sequence[Formula]) -> Formula:
    """Two-branch interval guard tying the level's a/b tuples to either the
    (outer lo, midpoint) or the (midpoint, outer hi) pair."""
    Y = params.level_tuple("Y", level)
    a = params.level_tuple("a", level)
    b = params.level_tuple("b", level)
    return Or((
        And((tuple_equiv(outer_lo, a), tuple_equiv(Y, b))),
        And((tuple_equiv(Y, a), tuple_equiv(b, outer_hi))),
    ))


def phi_k(params: EncodingParams, k: int, t: int = 0,
          cop_variant: str = "disjunction") -> Formula:
    """Machine behaviour over 2^k steps, by midpoint doubling.

    Free variables: the configuration tuples of colors t and t + 2^k.
    """
    if (1 << k) > params.T:
        raise LevelTooDeep(f"2^{k} exceeds the simulation period {params.T}")
    formula = phi_step0(params, t, cop_variant)
    lo_color, hi_color = t, t + 1
    for level in range(1, k + 1):
        inner = _rename_to_level(params, formula, lo_color, hi_color, level)
        hi_color = t + (1 << level)
        guard = theta_guard(params, level,
                            params.y_tuple(lo_color), params.y_tuple(hi_color))
        Y = params.level_tuple("Y", level)
        a = params.level_tuple("a", level)
        b = params.level_tuple("b", level)
        formula = Exists([f.vid for f in Y],
                         Forall([f.vid for f in a + b], Implies(guard, inner)))
    return formula


# ---------------------------------------------------------------------------
# configuration descriptions

@dataclass(frozen=True)
class ConfigDescriptor:
    """The data needed to write down a configuration of a given color.

    May describe an unrealizable configuration; mutation tests rely on that.
    """

    color: int
    state: int
    head1: int
    head2: int
    scanned1: int
    scanned2: int
    tape2: Tuple[int, ...]  # cells 0..T inclusive

    @classmethod
    def from_configuration(cls, params: EncodingParams, config: Configuration,
                           color: int) -> "ConfigDescriptor":
        tape2 = tuple(tape_read(config.tape2, i) for i in range(params.T + 1))
        return cls(color=color, state=config.state, head1=config.head1,
                   head2=config.head2, scanned1=config.read1(),
                   scanned2=config.read2(), tape2=tape2)


def _check_materializable(params: EncodingParams):
    if params.T > params.psi_config_cap:
        raise TooLargeToMaterialize(
            f"T={params.T} exceeds the materialization cap {params.psi_config_cap}")


def psi_l2(params: EncodingParams, desc: ConfigDescriptor) -> Formula:
    """Work-tape description of one color: timer plus one clause per cell."""
    _check_materializable(params)
    if len(desc.tape2) != params.T + 1:
        raise EncoderError(f"descriptor must cover cells 0..{params.T}")
    t = desc.color
    parts = [timer_pi(params, t, desc.state, desc.scanned1, desc.scanned2,
                      params.addr1(desc.head1), params.addr2(desc.head2))]
    for cell, symbol in enumerate(desc.tape2):
        parts.append(clause_psi2(params, t, params.addr2(cell), symbol))
    return conj(parts)


def psi_k1(params: EncodingParams, input_symbols: Sequence[int]) -> Formula:
    """Input-tape description: start marker, the input cells, blank tail."""
    if len(input_symbols) != params.n:
        raise LengthMismatch(f"expected {params.n} symbols, got {len(input_symbols)}")
    parts = [clause_psi1(params, params.addr1(0), START)]
    for i, symbol in enumerate(input_symbols, start=1):
        parts.append(clause_psi1(params, params.addr1(i), symbol))
    guard_vars = [Var(VarId("u0", (1, i))) for i in range(params.w1)]
    tail = Forall([v.vid for v in guard_vars],
                  Implies(lex_greater(guard_vars, params.addr1(params.n)),
                          clause_psi1(params, guard_vars, BLANK)))
    parts.append(tail)
    return conj(parts)


def psi_config(params: EncodingParams, desc: ConfigDescriptor,
               input_symbols: Sequence[int]) -> Formula:
    """Full configuration description: input tape and work tape together."""
    return And((psi_k1(params, input_symbols), psi_l2(params, desc)))


# ---------------------------------------------------------------------------
# initial and final conditions

def chi_1(params: EncodingParams, input_symbols: Sequence[int]) -> Formula:
    return psi_k1(params, input_symbols)


def chi_2(params: EncodingParams) -> Formula:
    """Empty work tape at color 0, start marker at cell 0."""
    guard_vars = [Var(VarId("u0", (2, i))) for i in range(params.w2)]
    return And((
        clause_psi2(params, 0, params.addr2(0), START),
        Forall([v.vid for v in guard_vars],
               Implies(lex_ge(guard_vars, params.addr2(1)),
                       clause_psi2(params, 0, guard_vars, BLANK))),
    ))


def pi_start(params: EncodingParams) -> Formula:
    return timer_pi(params, 0, 0, START, START, params.addr1(0), params.addr2(0))


def chi_initial(params: EncodingParams, input_str: str) -> Formula:
    """Short description of the whole initial configuration."""
    symbols = _input_symbols(params, input_str)
    return conj([chi_1(params, symbols), chi_2(params), pi_start(params)])


def chi_omega(params: EncodingParams) -> Formula:
    """Acceptance condition: the color-T state tuple equals the accept state."""
    return tuple_equiv(params.qs(params.T), params.state_code(1))


def _input_symbols(params: EncodingParams, input_str: str) -> Tuple[int, ...]:
    from .tm_core import validate_input
    symbols = validate_input(params.program, input_str)
    if len(symbols) != params.n:
        raise LengthMismatch(f"params expect n={params.n}, input has {len(symbols)}")
    return symbols


# ---------------------------------------------------------------------------
# the modeling sentence

def _ladder(params: EncodingParams, cop_variant: str) -> Formula:
    """The quantifier ladder reusing one copy of the one-step formula.

    Levels run m down to 1; level m's outer endpoints are the color-0 and
    color-T configuration tuples.
    """
    m = params.m
    thetas = []
    for level in range(1, m + 1):
        if level == m:
            outer_lo = params.y_tuple(0)
            outer_hi = params.y_tuple(params.T)
        else:
            outer_lo = params.level_tuple("a", level + 1)
            outer_hi = params.level_tuple("b", level + 1)
        thetas.append(theta_guard(params, level, outer_lo, outer_hi))

    base = _rename_to_level(params, phi_step0(params, 0, cop_variant), 0, 1, 1)
    body = Implies(conj(list(reversed(thetas))), base)

    formula = body
    for level in range(1, m + 1):
        Y = params.level_tuple("Y", level)
        a = params.level_tuple("a", level)
        b = params.level_tuple("b", level)
        formula = Exists([f.vid for f in Y],
                         Forall([f.vid for f in a + b], formula))
    return formula


def _closure_vars(params: EncodingParams) -> List[VarId]:
    out = [f.vid for f in params.y_tuple(0)]
    for var in params.y_tuple(params.T):
        if var.vid.kind not in ("X", "F"):
            out.append(var.vid)
    return out


def omega(params: EncodingParams, input_str: str,
          cop_variant: str = "disjunction") -> Formula:
    """The closed modeling sentence for (program, input, m)."""
    return Forall(
        _closure_vars(params),
        Implies(And((chi_initial(params, input_str), _ladder(params, cop_variant))),
                chi_omega(params)))


def delta_conditional(params: EncodingParams,
                      cop_variant: str = "disjunction") -> Formula:
    """The input-independent variant: the input-description conjunct dropped,
    the empty-work-tape and start-timer conjuncts retained."""
    start = And((chi_2(params), pi_start(params)))
    return Forall(
        _closure_vars(params),
        Implies(And((start, _ladder(params, cop_variant))), chi_omega(params)))


def component_lengths(params: EncodingParams, input_str: str,
                      cop_variant: str = "disjunction") -> Dict[str, int]:
    """Per-component natural lengths of the modeling sentence."""
    symbols = _input_symbols(params, input_str)
    return {
        "chi1": natural_length(chi_1(params, symbols)),
        "chi2": natural_length(chi_2(params)),
        "pi0": natural_length(pi_start(params)),
        "phi0": natural_length(phi_step0(params, 0, cop_variant)),
        "ladder": natural_length(_ladder(params, cop_variant)),
        "chi_omega": natural_length(chi_omega(params)),
        "omega": natural_length(omega(params, input_str, cop_variant)),
    }


# ---------------------------------------------------------------------------
# one-step and 2^k-step closures (test harness surfaces)

def omega_zero(params: EncodingParams, input_symbols: Sequence[int],
               desc_lo: ConfigDescriptor, desc_hi: ConfigDescriptor,
               cop_variant: str = "disjunction") -> Formula:
    """Universal closure of the one-step modeling implication."""
    return omega_level(params, 0, input_symbols, desc_lo, desc_hi, cop_variant)


def omega_level(params: EncodingParams, k: int, input_symbols: Sequence[int],
                desc_lo: ConfigDescriptor, desc_hi: ConfigDescriptor,
                cop_variant: str = "disjunction") -> Formula:
    """Universal closure of the 2^k-step modeling implication."""
    t = desc_lo.color
    if desc_hi.color != t + (1 << k):
        raise EncoderError(
            f"descriptor colors {desc_lo.color},{desc_hi.color} do not span 2^{k}")
    if desc_hi.color > params.T:
        raise EncoderError("final color exceeds the simulation period")
    premise = And((
        psi_config(params, desc_lo, input_symbols),
        phi_k(params, k, t, cop_variant),
    ))
    conclusion = psi_config(params, desc_hi, input_symbols)
    bound = [f.vid for f in params.y_tuple(t)]
    for var in params.y_tuple(desc_hi.color):
        if var.vid.kind not in ("X", "F"):
            bound.append(var.vid)
    return Forall(bound, Implies(premise, conclusion))


# ---------------------------------------------------------------------------
# indexed-constructible layouts

def reverse_binary(value: int, width: int) -> str:
    """Binary with the least significant bit first (the counting phase)."""
    return format(value, f"0{width}b")[::-1]


def indexed_layout(g_value: int) -> str:
    """Marker zone of g_value+1 cells, each marker followed by its cell
    number in standard binary.

    Built by the two-phase procedure: count the markers in reverse binary,
    then renumber in standard binary.
    """
    if g_value < 1:
        raise EncoderError("g_value must be at least 1")
    width = ceil_log2(g_value + 1)
    phase1 = ["X" + reverse_binary(i, width) for i in range(g_value + 1)]
    phase2 = []
    for block in phase1:
        number = int(block[1:][::-1], 2)
        phase2.append("X" + format(number, f"0{width}b"))
    return "".join(phase2)
