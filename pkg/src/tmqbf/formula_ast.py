"""Immutable quantified propositional formulas with typed, multi-indexed variables.

The variable system mirrors the encoder's needs: each variable has a kind
(a short letter tag) and a fixed number of integer indices, the last of
which is always a bit position inside a tuple.  Formulas are plain trees;
builders may share subtrees freely since every node is immutable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union


class FormulaError(Exception):
    pass


class WidthMismatch(FormulaError):
    pass


class UnknownVariableKind(FormulaError):
    pass


class CapturedVariable(FormulaError):
    pass


class ParseError(FormulaError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


# kind -> number of indices (the last index is always a bit position)
VAR_KINDS: Dict[str, int] = {
    "x": 2,   # tape-2 cell-address probe, per color
    "X": 1,   # tape-1 cell-address probe (colorless)
    "z": 2,   # tape-2 scanned-cell number, per color
    "Z": 2,   # tape-1 scanned-cell number, per color
    "q": 2,   # machine-state number, per color
    "f": 2,   # tape-2 symbol probe, per color
    "F": 1,   # tape-1 symbol probe (colorless)
    "D": 2,   # symbol under head 1, per color
    "d": 2,   # symbol under head 2, per color
    "U": 2,   # aux: scanned tape-1 cell, per instruction
    "u": 2,   # aux: scanned tape-2 cell, per instruction
    "V": 2,   # aux: tape-1 address correction, per instruction
    "v": 2,   # aux: tape-2 address correction, per instruction
    "H": 2,   # aux: retrieved tape-1 symbol, per instruction
    "h": 2,   # aux: retrieved tape-2 symbol, per instruction
    "w": 2,   # aux: copied-cell address, per instruction
    "g": 2,   # aux: copied-cell symbol, per instruction
    "Y": 2,   # midpoint tuple, per doubling level
    "a": 2,   # left interval endpoint, per doubling level
    "b": 2,   # right interval endpoint, per doubling level
    "u0": 2,  # blank-tail guard address (tag 1 = tape 1, tag 2 = tape 2)
}


@dataclass(frozen=True, order=True)
class VarId:
    kind: str
    indices: Tuple[int, ...]

    def __post_init__(self):
        if self.kind not in VAR_KINDS:
            raise UnknownVariableKind(self.kind)
        if len(self.indices) != VAR_KINDS[self.kind]:
            raise FormulaError(
                f"kind {self.kind!r} takes {VAR_KINDS[self.kind]} indices, "
                f"got {self.indices!r}")
        if any(i < 0 for i in self.indices):
            raise FormulaError(f"negative index in {self!r}")

    def __str__(self):
        return self.kind + "".join(f"[{i}]" for i in self.indices)


@dataclass(frozen=True)
class BitTuple:
    """Fixed-width bit vector, most-significant bit first."""

    bits: Tuple[bool, ...]

    @property
    def width(self) -> int:
        return len(self.bits)

    def value(self) -> int:
        v = 0
        for bit in self.bits:
            v = (v << 1) | int(bit)
        return v

    @classmethod
    def from_int(cls, value: int, width: int) -> "BitTuple":
        if width <= 0:
            raise WidthMismatch("width must be positive")
        if value < 0 or value >= (1 << width):
            raise WidthMismatch(f"value {value} does not fit in {width} bits")
        return cls(tuple(bool((value >> (width - 1 - i)) & 1) for i in range(width)))

    def __str__(self):
        return "(" + "".join("1" if b else "0" for b in self.bits) + ")"


class Formula:
    """Base class; all nodes are immutable and structurally comparable."""

    __slots__ = ("_free", "_nlen")

    def __init__(self):
        self._free: Optional[frozenset] = None
        self._nlen: Optional[int] = None

    # Structural equality, identity hashing.  Nodes are used as dict keys
    # only via id() (memo tables), never via structural hashing.
    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return object.__hash__(self)

    def _key(self):
        raise NotImplementedError

    def __repr__(self):
        return render(self)


class Const(Formula):
    __slots__ = ("value",)

    def __init__(self, value: bool):
        super().__init__()
        self.value = bool(value)

    def _key(self):
        return (self.value,)


TRUE = Const(True)
FALSE = Const(False)


class Var(Formula):
    __slots__ = ("vid",)

    def __init__(self, vid: VarId):
        super().__init__()
        self.vid = vid

    def _key(self):
        return (self.vid,)


class Not(Formula):
    __slots__ = ("sub",)

    def __init__(self, sub: Formula):
        super().__init__()
        self.sub = sub

    def _key(self):
        return (self.sub,)


class _Nary(Formula):
    __slots__ = ("args",)

    def __init__(self, args: Iterable[Formula]):
        super().__init__()
        self.args = tuple(args)
        if not self.args:
            raise FormulaError(f"{type(self).__name__} needs at least one argument")

    def _key(self):
        return self.args


class And(_Nary):
    __slots__ = ()


class Or(_Nary):
    __slots__ = ()


class _Binary(Formula):
    __slots__ = ("lhs", "rhs")

    def __init__(self, lhs: Formula, rhs: Formula):
        super().__init__()
        self.lhs = lhs
        self.rhs = rhs

    def _key(self):
        return (self.lhs, self.rhs)


class Implies(_Binary):
    __slots__ = ()


class Equiv(_Binary):
    __slots__ = ()


class Xor(_Binary):
    __slots__ = ()


class _Quant(Formula):
    __slots__ = ("vars", "body")

    def __init__(self, vars: Sequence[VarId], body: Formula):
        super().__init__()
        self.vars = tuple(vars)
        if not self.vars:
            raise FormulaError("quantifier needs at least one variable")
        if len(set(self.vars)) != len(self.vars):
            raise FormulaError("duplicate variable in quantifier list")
        self.body = body

    def _key(self):
        return (self.vars, self.body)


class Forall(_Quant):
    __slots__ = ()


class Exists(_Quant):
    __slots__ = ()


# ---------------------------------------------------------------------------
# builders

TupleLike = Union[BitTuple, Sequence[Formula]]


def _as_formula_tuple(t: TupleLike) -> Tuple[Formula, ...]:
    if isinstance(t, BitTuple):
        return tuple(TRUE if b else FALSE for b in t.bits)
    out = tuple(t)
    for el in out:
        if not isinstance(el, Formula):
            raise FormulaError(f"tuple element {el!r} is not a formula")
    return out


def conj(parts: Sequence[Formula]) -> Formula:
    parts = tuple(parts)
    if not parts:
        return TRUE
    if len(parts) == 1:
        return parts[0]
    return And(parts)


def disj(parts: Sequence[Formula]) -> Formula:
    parts = tuple(parts)
    if not parts:
        return FALSE
    if len(parts) == 1:
        return parts[0]
    return Or(parts)


def tuple_equiv(lhs: TupleLike, rhs: TupleLike) -> Formula:
    """The system of positionwise equivalences between two equal-width tuples."""
    left = _as_formula_tuple(lhs)
    right = _as_formula_tuple(rhs)
    if len(left) != len(right):
        raise WidthMismatch(f"tuple widths differ: {len(left)} vs {len(right)}")
    return conj([Equiv(a, b) for a, b in zip(left, right)])


def lex_less(lhs: TupleLike, rhs: TupleLike) -> Formula:
    """Strict lexicographic comparison, built right-associatively.

    Per-position `x < y` unfolds to `x = 0 and y = 1`.
    """
    left = _as_formula_tuple(lhs)
    right = _as_formula_tuple(rhs)
    if len(left) != len(right):
        raise WidthMismatch(f"tuple widths differ: {len(left)} vs {len(right)}")

    def bit_less(a: Formula, b: Formula) -> Formula:
        return And((Equiv(a, FALSE), Equiv(b, TRUE)))

    out = bit_less(left[-1], right[-1])
    for a, b in zip(reversed(left[:-1]), reversed(right[:-1])):
        out = Or((bit_less(a, b), And((Equiv(a, b), out))))
    return out


def lex_greater(lhs: TupleLike, rhs: TupleLike) -> Formula:
    return lex_less(rhs, lhs)


def lex_ge(lhs: TupleLike, rhs: TupleLike) -> Formula:
    return Or((lex_greater(lhs, rhs), tuple_equiv(lhs, rhs)))


# ---------------------------------------------------------------------------
# traversal

def free_vars(f: Formula) -> frozenset:
    cached = f._free
    if cached is not None:
        return cached
    if isinstance(f, Const):
        out = frozenset()
    elif isinstance(f, Var):
        out = frozenset((f.vid,))
    elif isinstance(f, Not):
        out = free_vars(f.sub)
    elif isinstance(f, _Nary):
        out = frozenset().union(*(free_vars(a) for a in f.args))
    elif isinstance(f, _Binary):
        out = free_vars(f.lhs) | free_vars(f.rhs)
    elif isinstance(f, _Quant):
        out = free_vars(f.body) - frozenset(f.vars)
    else:
        raise FormulaError(f"unknown node {f!r}")
    f._free = out
    return out


def is_closed(f: Formula) -> bool:
    return not free_vars(f)


def all_vars(f: Formula) -> frozenset:
    """Every variable occurring in f, free or bound."""
    seen = set()
    stack = [f]
    visited = set()
    while stack:
        node = stack.pop()
        if id(node) in visited:
            continue
        visited.add(id(node))
        if isinstance(node, Var):
            seen.add(node.vid)
        elif isinstance(node, Not):
            stack.append(node.sub)
        elif isinstance(node, _Nary):
            stack.extend(node.args)
        elif isinstance(node, _Binary):
            stack.append(node.lhs)
            stack.append(node.rhs)
        elif isinstance(node, _Quant):
            seen.update(node.vars)
            stack.append(node.body)
    return frozenset(seen)


def substitute(f: Formula, binding: Dict[VarId, bool]) -> Formula:
    """Replace free occurrences of bound-to-bit variables by constants.

    Quantified variables may not appear in the binding's domain anywhere in
    the subtree they are bound in (no capture).
    """
    if not binding:
        return f

    def go(node: Formula) -> Formula:
        if isinstance(node, Const):
            return node
        if isinstance(node, Var):
            if node.vid in binding:
                return TRUE if binding[node.vid] else FALSE
            return node
        if isinstance(node, Not):
            return Not(go(node.sub))
        if isinstance(node, And):
            return And(tuple(go(a) for a in node.args))
        if isinstance(node, Or):
            return Or(tuple(go(a) for a in node.args))
        if isinstance(node, Implies):
            return Implies(go(node.lhs), go(node.rhs))
        if isinstance(node, Equiv):
            return Equiv(go(node.lhs), go(node.rhs))
        if isinstance(node, Xor):
            return Xor(go(node.lhs), go(node.rhs))
        if isinstance(node, (Forall, Exists)):
            captured = [v for v in node.vars if v in binding]
            if captured:
                raise CapturedVariable(f"binding touches bound variables {captured}")
            return type(node)(node.vars, go(node.body))
        raise FormulaError(f"unknown node {node!r}")

    return go(f)


def rename_vars(f: Formula, mapping: Dict[VarId, VarId]) -> Formula:
    """Rename free variables.  Targets must not collide with bound variables."""
    if not mapping:
        return f

    def go(node: Formula) -> Formula:
        if isinstance(node, Const):
            return node
        if isinstance(node, Var):
            return Var(mapping[node.vid]) if node.vid in mapping else node
        if isinstance(node, Not):
            return Not(go(node.sub))
        if isinstance(node, And):
            return And(tuple(go(a) for a in node.args))
        if isinstance(node, Or):
            return Or(tuple(go(a) for a in node.args))
        if isinstance(node, Implies):
            return Implies(go(node.lhs), go(node.rhs))
        if isinstance(node, Equiv):
            return Equiv(go(node.lhs), go(node.rhs))
        if isinstance(node, Xor):
            return Xor(go(node.lhs), go(node.rhs))
        if isinstance(node, (Forall, Exists)):
            bound = set(node.vars)
            clash = [v for v in mapping.values() if v in bound]
            if clash:
                raise CapturedVariable(f"rename target {clash} is bound here")
            inner = {k: v for k, v in mapping.items() if k not in bound}
            return type(node)(node.vars, rename_vars(node.body, inner))
        raise FormulaError(f"unknown node {node!r}")

    return go(f)


# ---------------------------------------------------------------------------
# the natural-language length metric

def _var_length(vid: VarId) -> int:
    return len(vid.kind) + sum(2 + len(str(i)) for i in vid.indices)


def natural_length(f: Formula) -> int:
    """Character count of the canonical rendering, whitespace excluded.

    Constants count as 4 characters each: they stand for the two-variable
    abbreviations that expand a 0/1 leaf into a conjunction/disjunction of a
    variable with its negation.
    """
    cached = f._nlen
    if cached is not None:
        return cached
    if isinstance(f, Const):
        out = 4
    elif isinstance(f, Var):
        out = _var_length(f.vid)
    elif isinstance(f, Not):
        out = 3 + natural_length(f.sub)
    elif isinstance(f, _Nary):
        out = 3 + sum(natural_length(a) for a in f.args)
    elif isinstance(f, _Binary):
        out = 3 + natural_length(f.lhs) + natural_length(f.rhs)
    elif isinstance(f, _Quant):
        out = 5 + sum(_var_length(v) for v in f.vars) + natural_length(f.body)
    else:
        raise FormulaError(f"unknown node {f!r}")
    f._nlen = out
    return out


# ---------------------------------------------------------------------------
# text format: s-expressions, whitespace-insensitive

_OP_OF = {And: "&", Or: "|", Implies: ">", Equiv: "=", Xor: "^"}


def render(f: Formula) -> str:
    out: List[str] = []

    def go(node: Formula):
        if isinstance(node, Const):
            out.append("T" if node.value else "F")
        elif isinstance(node, Var):
            out.append(str(node.vid))
        elif isinstance(node, Not):
            out.append("(~ ")
            go(node.sub)
            out.append(")")
        elif isinstance(node, _Nary):
            out.append(f"({_OP_OF[type(node)]}")
            for a in node.args:
                out.append(" ")
                go(a)
            out.append(")")
        elif isinstance(node, _Binary):
            out.append(f"({_OP_OF[type(node)]} ")
            go(node.lhs)
            out.append(" ")
            go(node.rhs)
            out.append(")")
        elif isinstance(node, _Quant):
            out.append("(A (" if isinstance(node, Forall) else "(E (")
            out.append(" ".join(str(v) for v in node.vars))
            out.append(") ")
            go(node.body)
            out.append(")")
        else:
            raise FormulaError(f"unknown node {node!r}")

    go(f)
    return "".join(out)


_TOKEN_RE = re.compile(r"\s*([()]|[^()\s]+)")
_VAR_RE = re.compile(r"^([A-Za-z][A-Za-z0-9]*?)((?:\[\d+\])+)$")


def _tokenize(text: str) -> List[Tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            break
        tokens.append((m.group(1), m.start(1)))
        pos = m.end()
    return tokens


def parse(text: str) -> Formula:
    tokens = _tokenize(text)
    idx = 0

    def error(msg, at=None):
        pos = tokens[at][1] if at is not None and at < len(tokens) else len(text)
        raise ParseError(msg, pos)

    def atom(tok: str, at: int) -> Formula:
        if tok == "T":
            return TRUE
        if tok == "F":
            return FALSE
        m = _VAR_RE.match(tok)
        if not m:
            error(f"bad atom {tok!r}", at)
        kind = m.group(1)
        if kind not in VAR_KINDS:
            raise UnknownVariableKind(kind)
        indices = tuple(int(s) for s in re.findall(r"\[(\d+)\]", m.group(2)))
        return Var(VarId(kind, indices))

    def parse_var(tok: str, at: int) -> VarId:
        node = atom(tok, at)
        if not isinstance(node, Var):
            error("expected a variable", at)
        return node.vid

    def expr() -> Formula:
        nonlocal idx
        if idx >= len(tokens):
            error("unexpected end of input")
        tok, at = tokens[idx]
        idx += 1
        if tok == ")":
            error("unexpected ')'", at - 1 if at else None)
        if tok != "(":
            return atom(tok, at)
        if idx >= len(tokens):
            error("unexpected end of input")
        head, head_at = tokens[idx]
        idx += 1
        if head == "~":
            sub = expr()
            expect_close()
            return Not(sub)
        if head in ("&", "|"):
            args = []
            while idx < len(tokens) and tokens[idx][0] != ")":
                args.append(expr())
            expect_close()
            if not args:
                error("empty connective", head_at)
            return (And if head == "&" else Or)(tuple(args))
        if head in (">", "=", "^"):
            lhs = expr()
            rhs = expr()
            expect_close()
            cls = {">": Implies, "=": Equiv, "^": Xor}[head]
            return cls(lhs, rhs)
        if head in ("A", "E"):
            if idx >= len(tokens) or tokens[idx][0] != "(":
                error("expected variable list", idx)
            idx += 1
            vids = []
            while idx < len(tokens) and tokens[idx][0] != ")":
                tok2, at2 = tokens[idx]
                idx += 1
                vids.append(parse_var(tok2, at2))
            expect_close()
            body = expr()
            expect_close()
            return (Forall if head == "A" else Exists)(tuple(vids), body)
        error(f"unknown operator {head!r}", head_at)

    def expect_close():
        nonlocal idx
        if idx >= len(tokens) or tokens[idx][0] != ")":
            error("expected ')'", idx if idx < len(tokens) else None)
        idx += 1

    result = expr()
    if idx != len(tokens):
        error("trailing input", idx)
    return result
