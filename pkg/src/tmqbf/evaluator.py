"""Deciders for closed formulas.

Two engines share one interface:

* ``eval_naive`` expands every quantifier over all assignments; it is the
  ground truth for small formulas.
* ``eval_guarded`` exploits the shapes the encoder emits: universally
  quantified implications whose premises pin the quantified tuple (timer
  equivalences, correction chains, retrieval clauses), two-branch interval
  guards, and the midpoint ladder, which it decides by composing per-level
  solution sets instead of enumerating midpoint tuples.  Anything unguarded
  falls back to bounded depth-first enumeration with three-valued pruning.

Both engines accept an optional input probe that supplies the dropped
input-description conjunct of a conditional formula virtually.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .formula_ast import (
    And, Const, Equiv, Exists, Forall, Formula, Implies, Not, Or, Var, VarId,
    Xor, all_vars, free_vars,
)
from .tm_core import START, tape_read, validate_input


class EvalError(Exception):
    pass


class TooManyVariables(EvalError):
    pass


class UnboundVariable(EvalError):
    pass


class GuardFallbackOverflow(EvalError):
    pass


class AddressOverflow(EvalError):
    pass


@dataclass
class EvalStats:
    branch_count: int = 0
    peak_env: int = 0
    guard_hits: int = 0

    def note_env(self, size: int):
        if size > self.peak_env:
            self.peak_env = size


Assignment = Dict[VarId, bool]

_TOP = "TOP"  # marker: every assignment of the target tuple satisfies the body


class InputOracle:
    """Virtual tape-1 probe: answers whether a cell holds a given symbol.

    Passed to an evaluator together with a conditional formula, the probe
    stands in for the removed input-description conjunct: the top
    implication's premise is strengthened by the requirement that the
    colorless tape-1 probe variables describe the real input tape.
    """

    def __init__(self, input_str: str, params):
        self.params = params
        self.tape1 = (START,) + validate_input(params.program, input_str)
        self.width = params.w1
        self.x_vars = tuple(v.vid for v in params.Xs())
        self.f_vars = tuple(v.vid for v in params.Fs())

    def probe(self, address: int, symbol: int) -> bool:
        if address < 0 or address >= (1 << self.width):
            raise AddressOverflow(f"address {address} exceeds width {self.width}")
        return tape_read(self.tape1, address) == symbol

    def expected_code(self, address: int) -> Tuple[bool, ...]:
        return self.params.code(tape_read(self.tape1, address)).bits

    def ok(self, env: Assignment) -> Optional[bool]:
        """Truth of the virtual input description under env; None while the
        probe variables are not all assigned."""
        addr = 0
        for vid in self.x_vars:
            if vid not in env:
                return None
            addr = (addr << 1) | int(env[vid])
        expected = self.expected_code(addr)
        for vid, bit in zip(self.f_vars, expected):
            if vid not in env:
                return None
            if env[vid] != bit:
                return False
        return True


def make_input_oracle(input_str: str, params) -> InputOracle:
    return InputOracle(input_str, params)


def _oracle_site(formula: Formula) -> Optional[Formula]:
    """The first implication inside the outermost universal block."""
    node = formula
    while isinstance(node, Forall):
        node = node.body
    return node if isinstance(node, Implies) else None


# ---------------------------------------------------------------------------
# naive evaluator

def eval_naive(formula: Formula, oracle: Optional[InputOracle] = None,
               var_cap: int = 24) -> Tuple[bool, EvalStats]:
    if free_vars(formula):
        raise UnboundVariable(
            f"formula is not closed: {sorted(free_vars(formula))[:4]}")
    total = len(all_vars(formula))
    if total > var_cap:
        raise TooManyVariables(f"{total} variables exceed the cap {var_cap}")
    stats = EvalStats()
    site = _oracle_site(formula) if oracle is not None else None
    env: Assignment = {}

    def go(node: Formula) -> bool:
        if isinstance(node, Const):
            return node.value
        if isinstance(node, Var):
            try:
                return env[node.vid]
            except KeyError:
                raise UnboundVariable(str(node.vid))
        if isinstance(node, Not):
            return not go(node.sub)
        if isinstance(node, And):
            return all(go(a) for a in node.args)
        if isinstance(node, Or):
            return any(go(a) for a in node.args)
        if isinstance(node, Implies):
            premise = go(node.lhs)
            if node is site:
                ok = oracle.ok(env)
                if ok is None:
                    raise EvalError("oracle site reached with unassigned probes")
                premise = premise and ok
            return (not premise) or go(node.rhs)
        if isinstance(node, Equiv):
            return go(node.lhs) == go(node.rhs)
        if isinstance(node, Xor := type(node)) if False else isinstance(node, _XorType):
            return go(node.lhs) != go(node.rhs)
        raise EvalError(f"unknown node {node!r}")

    # quantifiers need the loop; rebuild go with them included
    def go2(node: Formula) -> bool:
        if isinstance(node, (Forall, Exists)):
            want_all = isinstance(node, Forall)
            result = want_all
            for bits in itertools.product((False, True), repeat=len(node.vars)):
                for vid, bit in zip(node.vars, bits):
                    env[vid] = bit
                stats.branch_count += 1
                stats.note_env(len(env))
                value = go2(node.body)
                if want_all != value:
                    result = value
                    break
            for vid in node.vars:
                env.pop(vid, None)
            return result
        if isinstance(node, Const):
            return node.value
        if isinstance(node, Var):
            try:
                return env[node.vid]
            except KeyError:
                raise UnboundVariable(str(node.vid))
        if isinstance(node, Not):
            return not go2(node.sub)
        if isinstance(node, And):
            return all(go2(a) for a in node.args)
        if isinstance(node, Or):
            return any(go2(a) for a in node.args)
        if isinstance(node, Implies):
            premise = go2(node.lhs)
            if node is site:
                ok = oracle.ok(env)
                if ok is None:
                    raise EvalError("oracle site reached with unassigned probes")
                premise = premise and ok
            return (not premise) or go2(node.rhs)
        if isinstance(node, Equiv):
            return go2(node.lhs) == go2(node.rhs)
        if isinstance(node, _XorType):
            return go2(node.lhs) != go2(node.rhs)
        raise EvalError(f"unknown node {node!r}")

    return go2(formula), stats


from .formula_ast import Xor as _XorType  # noqa: E402  (late to keep go() tidy)


# ---------------------------------------------------------------------------
# guarded evaluator

def eval_guarded(formula: Formula, oracle: Optional[InputOracle] = None,
                 branch_cap: int = 1 << 24,
                 sol_enum_cap: int = 1 << 15,
                 sol_set_cap: int = 1 << 15) -> Tuple[bool, EvalStats]:
    if free_vars(formula):
        raise UnboundVariable(
            f"formula is not closed: {sorted(free_vars(formula))[:4]}")
    engine = _Guarded(oracle, branch_cap, sol_enum_cap, sol_set_cap,
                      _oracle_site(formula) if oracle is not None else None)
    return engine.decide(formula, {}), engine.stats


def _conjuncts(node: Formula) -> List[Formula]:
    if isinstance(node, And):
        out: List[Formula] = []
        for a in node.args:
            out.extend(_conjuncts(a))
        return out
    return [node]


@dataclass
class _Level:
    """One ladder level: E yvars . A avars bvars . guard -> inner."""

    yvars: Tuple[VarId, ...]
    a_order: Tuple[VarId, ...]
    b_order: Tuple[VarId, ...]
    lo_src: Tuple[Tuple[str, object], ...]   # per a-position value source
    hi_src: Tuple[Tuple[str, object], ...]   # per b-position value source


@dataclass
class _IntervalShape:
    levels: List[_Level]
    base: Formula
    identity_lo: bool  # every non-top level copies the parent a-tuple verbatim


_UNSAT = "UNSAT"


class _Guarded:
    def __init__(self, oracle, branch_cap, sol_enum_cap, sol_set_cap, oracle_site):
        self.oracle = oracle
        self.oracle_site = oracle_site
        self.sol_enum_cap = sol_enum_cap
        self.sol_set_cap = sol_set_cap
        self.stats = EvalStats()
        self.budget = branch_cap
        self._frees: Dict[int, Tuple[VarId, ...]] = {}
        self._memo: Dict[Tuple[int, Tuple[bool, ...]], bool] = {}
        self._shape_cache: Dict[int, Optional[_IntervalShape]] = {}
        self._guard_cache: Dict[int, tuple] = {}
        self._sols: Dict[tuple, object] = {}
        self._reach2: Dict[tuple, object] = {}
        self._garbage: Dict[tuple, object] = {}
        self._keep: List[Formula] = []  # keeps id() keys alive

    def _spend(self, amount: int = 1):
        self.budget -= amount
        self.stats.branch_count += amount
        if self.budget < 0:
            raise GuardFallbackOverflow("branch budget exhausted")

    # -- bookkeeping ---------------------------------------------------------
    def frees_of(self, node: Formula) -> Tuple[VarId, ...]:
        got = self._frees.get(id(node))
        if got is None:
            got = tuple(sorted(free_vars(node)))
            self._frees[id(node)] = got
            self._keep.append(node)
        return got

    def _key(self, node: Formula, env: Assignment) -> Tuple[bool, ...]:
        return tuple(env[v] for v in self.frees_of(node))

    # -- full decision (all free variables assigned) ---------------------------
    def decide(self, node: Formula, env: Assignment) -> bool:
        if isinstance(node, Const):
            return node.value
        if isinstance(node, Var):
            try:
                return env[node.vid]
            except KeyError:
                raise UnboundVariable(str(node.vid))
        if isinstance(node, Not):
            return not self.decide(node.sub, env)
        if isinstance(node, (Equiv, _XorType)):
            lhs = self.decide(node.lhs, env)
            rhs = self.decide(node.rhs, env)
            return (lhs == rhs) if isinstance(node, Equiv) else (lhs != rhs)
        memo_key = (id(node), self._key(node, env))
        hit = self._memo.get(memo_key)
        if hit is not None:
            return hit
        if isinstance(node, And):
            value = all(self.decide(a, env) for a in node.args)
        elif isinstance(node, Or):
            value = any(self.decide(a, env) for a in node.args)
        elif isinstance(node, Implies):
            premise = self.decide(node.lhs, env)
            if node is self.oracle_site:
                ok = self.oracle.ok(env)
                if ok is None:
                    raise EvalError("oracle site reached with unassigned probes")
                premise = premise and ok
            value = (not premise) or self.decide(node.rhs, env)
        elif isinstance(node, (Forall, Exists)):
            value = self._decide_quant(node, env)
        else:
            raise EvalError(f"unknown node {node!r}")
        self._memo[memo_key] = value
        self._keep.append(node)
        return value

    # -- three-valued evaluation under a partial environment -------------------
    def eval3(self, node: Formula, env: Assignment) -> Optional[bool]:
        if isinstance(node, Const):
            return node.value
        if isinstance(node, Var):
            return env.get(node.vid)
        if isinstance(node, Not):
            v = self.eval3(node.sub, env)
            return None if v is None else (not v)
        if isinstance(node, And):
            undecided = False
            for a in node.args:
                v = self.eval3(a, env)
                if v is False:
                    return False
                if v is None:
                    undecided = True
            return None if undecided else True
        if isinstance(node, Or):
            undecided = False
            for a in node.args:
                v = self.eval3(a, env)
                if v is True:
                    return True
                if v is None:
                    undecided = True
            return None if undecided else False
        if isinstance(node, Implies):
            lhs = self.eval3(node.lhs, env)
            if node is self.oracle_site:
                ok = self.oracle.ok(env)
                if ok is False:
                    return True
                if ok is None and lhs is not False:
                    lhs = None
            if lhs is False:
                return True
            rhs = self.eval3(node.rhs, env)
            if rhs is True:
                return True
            if lhs is True and rhs is False:
                return False
            return None
        if isinstance(node, (Equiv, _XorType)):
            lhs = self.eval3(node.lhs, env)
            if lhs is None:
                return None
            rhs = self.eval3(node.rhs, env)
            if rhs is None:
                return None
            return (lhs == rhs) if isinstance(node, Equiv) else (lhs != rhs)
        if isinstance(node, (Forall, Exists)):
            for v in self.frees_of(node):
                if v not in env:
                    return self._eval3_quant_partial(node, env)
            return self.decide(node, env)
        raise EvalError(f"unknown node {node!r}")

    def _eval3_quant_partial(self, node, env) -> Optional[bool]:
        """Early verdicts for a universal implication whose premise can be
        resolved from already-assigned sources."""
        if not (isinstance(node, Forall) and isinstance(node.body, Implies)):
            return None
        fired = self._fired_combos(node, env)
        if fired is None:
            return None
        if not fired:
            return True  # premise unsatisfiable here: vacuously true
        undecided = False
        for sub, _free in fired:
            v = self.eval3(node.body.rhs, sub)
            if v is False:
                return False
            if v is None:
                undecided = True
        return None if undecided else True

    # -- quantifier blocks ------------------------------------------------------
    def _decide_quant(self, node, env: Assignment) -> bool:
        want_all = isinstance(node, Forall)

        if not want_all:
            shape = self._interval_shape(node)
            if shape is not None:
                return self._interval_decide(node, shape, env)

        guard = None
        if want_all and isinstance(node.body, Implies):
            guard = node.body.lhs
        elif not want_all and isinstance(node.body, And):
            guard = node.body

        pins: Assignment = {}
        or_branches = None
        if guard is not None:
            pins, or_branches = self._analyze_guard(node, guard, env)
            if pins is None:
                return want_all  # unsatisfiable guard

        missing = [v for v in node.vars if v not in pins]
        if not missing or or_branches is not None:
            combos = [pins] if not missing else or_branches
            self.stats.guard_hits += 1
            sub = dict(env)
            for combo in combos:
                sub.update(combo)
                self._spend()
                self.stats.note_env(len(sub))
                value = self.decide(node.body, sub)
                if want_all != value:
                    return value
            return want_all

        if want_all:
            special = self._decide_ladder_closure(node, env, pins)
            if special is not None:
                return special

        sub = dict(env)
        sub.update(pins)
        body = node.body

        def leaf(s: Assignment) -> bool:
            return self.decide(body, s)

        def prune(s: Assignment) -> Optional[bool]:
            return self.eval3(body, s)

        return self._dfs(missing, sub, leaf, want_all, prune)

    # .. guard analysis ..........................................................
    def _guard_plan(self, node, guard):
        plan = self._guard_cache.get(id(node))
        if plan is None:
            eq_atoms = []
            or_guards = []
            cond_parts = []
            for part in _conjuncts(guard):
                if isinstance(part, Equiv):
                    eq_atoms.append((part.lhs, part.rhs))
                elif isinstance(part, Implies):
                    cond_parts.append(part)
                elif isinstance(part, Or) and len(part.args) >= 2:
                    branches = []
                    for disjunct in part.args:
                        atoms = []
                        good = True
                        for atom in _conjuncts(disjunct):
                            if isinstance(atom, Equiv):
                                atoms.append((atom.lhs, atom.rhs))
                            else:
                                good = False
                                break
                        if not good:
                            branches = None
                            break
                        branches.append(atoms)
                    if branches:
                        or_guards.append(branches)
            plan = (set(node.vars), eq_atoms, or_guards, cond_parts)
            self._guard_cache[id(node)] = plan
            self._keep.append(node)
        return plan

    def _analyze_guard(self, node, guard, env):
        """-> (pins | None-if-contradiction, full or-branch combos | None)."""
        target, eq_atoms, or_guards, _cond = self._guard_plan(node, guard)
        pins = self._resolve_pins(eq_atoms, target, env)
        if pins is None:
            return None, None
        missing = target - set(pins)
        if not missing:
            return pins, None

        for branches in or_guards:
            combos = []
            complete = True
            for atoms in branches:
                merged = dict(env)
                merged.update(pins)
                sub = self._resolve_pins(atoms, missing, merged)
                if sub is None:
                    continue  # contradictory disjunct contributes nothing
                if missing - set(sub):
                    complete = False
                    break
                combo = dict(pins)
                combo.update(sub)
                if combo not in combos:
                    combos.append(combo)
            if complete:
                return pins, combos
        return pins, None

    def _resolve_pins(self, eq_atoms, target: Set[VarId],
                      env: Assignment) -> Optional[Assignment]:
        pins: Assignment = {}
        merged = dict(env)
        progress = True
        while progress:
            progress = False
            for lhs, rhs in eq_atoms:
                for var_side, expr_side in ((lhs, rhs), (rhs, lhs)):
                    if not isinstance(var_side, Var):
                        continue
                    vid = var_side.vid
                    if vid not in target or vid in pins:
                        continue
                    value = self.eval3(expr_side, merged)
                    if value is None:
                        continue
                    pins[vid] = value
                    merged[vid] = value
                    progress = True
        for lhs, rhs in eq_atoms:
            lv = self.eval3(lhs, merged)
            rv = self.eval3(rhs, merged)
            if lv is not None and rv is not None and lv != rv:
                return None
        return pins

    def _fired_combos(self, node, env) -> Optional[List[Tuple[Assignment, Set[VarId]]]]:
        """Resolve a universal implication block to its fired instantiations.

        Returns None when undecidable under env, else a list of
        (environment, free-fired variables) pairs with the premise true; the
        free-fired variables range over all values without affecting it.
        """
        premise = node.body.lhs
        pins, or_branches = self._analyze_guard(node, premise, env)
        if pins is None:
            return []
        missing = set(node.vars) - set(pins)
        base_combos = [pins] if not missing or or_branches is None else or_branches
        if missing and or_branches is None:
            base_combos = [pins]
        _t, _eq, _or, cond_parts = self._guard_plan(node, premise)

        out = []
        for combo in base_combos:
            sub = dict(env)
            sub.update(combo)
            # conditional definitional pins (retrieval clauses)
            progress = True
            while progress:
                progress = False
                for part in cond_parts:
                    if self.eval3(part.lhs, sub) is not True:
                        continue
                    for atom in _conjuncts(part.rhs):
                        if not isinstance(atom, Equiv):
                            continue
                        for var_side, expr_side in ((atom.lhs, atom.rhs),
                                                    (atom.rhs, atom.lhs)):
                            if isinstance(var_side, Var) \
                                    and var_side.vid in missing \
                                    and var_side.vid not in sub:
                                val = self.eval3(expr_side, sub)
                                if val is not None:
                                    sub[var_side.vid] = val
                                    progress = True
            verdict = self.eval3(premise, sub)
            if verdict is True:
                free = {v for v in node.vars if v not in sub}
                out.append((sub, free))
            elif verdict is None:
                return None
        return out

    # .. bounded DFS .............................................................
    def _dfs(self, vars_order: Sequence[VarId], env: Assignment,
             leaf: Callable[[Assignment], bool], want_all: bool,
             prune: Optional[Callable[[Assignment], Optional[bool]]] = None) -> bool:
        sub = dict(env)

        def go(idx: int) -> bool:
            if idx == len(vars_order):
                self._spend()
                self.stats.note_env(len(sub))
                return leaf(sub)
            if prune is not None:
                early = prune(sub)
                if early is not None:
                    return early
            vid = vars_order[idx]
            for bit in (False, True):
                sub[vid] = bit
                value = go(idx + 1)
                if want_all != value:
                    del sub[vid]
                    return value
            del sub[vid]
            return want_all

        return go(0)

    # .. interval (midpoint ladder) machinery ....................................
    def _interval_shape(self, node) -> Optional[_IntervalShape]:
        if id(node) in self._shape_cache:
            return self._shape_cache[id(node)]
        shape = self._match_interval(node)
        self._shape_cache[id(node)] = shape
        self._keep.append(node)
        return shape

    def _match_interval(self, node) -> Optional[_IntervalShape]:
        raw: List[list] = []  # [yvars, abvars, theta-or-None]
        bottom_premise = None
        base = None
        cur = node
        while True:
            if not (isinstance(cur, Exists) and isinstance(cur.body, Forall)):
                return None
            yvars = tuple(cur.vars)
            abvars = tuple(cur.body.vars)
            inner = cur.body.body
            if isinstance(inner, Exists):
                raw.append([yvars, abvars, None])
                cur = inner
                continue
            if isinstance(inner, Implies):
                premise = _conjuncts(inner.lhs)
                if isinstance(inner.rhs, Exists) and len(premise) == 1 \
                        and isinstance(premise[0], Or) \
                        and self._theta_vars(premise[0], set(abvars)) == set(abvars):
                    raw.append([yvars, abvars, premise[0]])
                    cur = inner.rhs
                    continue
                raw.append([yvars, abvars, None])
                bottom_premise = premise
                base = inner.rhs
                break
            return None

        unguarded = [entry for entry in raw if entry[2] is None]
        if base is None or bottom_premise is None:
            return None
        if not all(isinstance(p, Or) for p in bottom_premise):
            return None
        by_vars = {}
        for theta in bottom_premise:
            for entry in unguarded:
                abset = frozenset(entry[1])
                if frozenset(self._theta_vars(theta, set(abset))) == abset:
                    if abset in by_vars:
                        return None
                    by_vars[abset] = theta
                    break
            else:
                return None
        if len(by_vars) != len(unguarded):
            return None
        for entry in unguarded:
            entry[2] = by_vars[frozenset(entry[1])]

        levels: List[_Level] = []
        parent_a: Optional[Dict[VarId, int]] = None
        parent_b: Optional[Dict[VarId, int]] = None
        for yvars, abvars, theta in raw:
            level = self._parse_theta(yvars, abvars, theta, parent_a, parent_b)
            if level is None:
                return None
            levels.append(level)
            parent_a = {v: i for i, v in enumerate(level.a_order)}
            parent_b = {v: i for i, v in enumerate(level.b_order)}

        inner_ab = set(levels[-1].a_order) | set(levels[-1].b_order)
        owned = set()
        for lvl in levels:
            owned.update(lvl.yvars)
            owned.update(lvl.a_order)
            owned.update(lvl.b_order)
        for vid in self.frees_of(base):
            if vid in owned and vid not in inner_ab:
                return None

        width = len(levels[-1].a_order)
        identity = tuple(("a", i) for i in range(width))
        identity_lo = all(lvl.lo_src == identity for lvl in levels[1:])
        return _IntervalShape(levels, base, identity_lo)

    @staticmethod
    def _theta_vars(theta: Formula, abset: Set[VarId]) -> Set[VarId]:
        out = set()
        if not isinstance(theta, Or):
            return out
        for disjunct in theta.args:
            for atom in _conjuncts(disjunct):
                if not isinstance(atom, Equiv):
                    return set()
                for side in (atom.lhs, atom.rhs):
                    if isinstance(side, Var) and side.vid in abset:
                        out.add(side.vid)
        return out

    def _parse_theta(self, yvars, abvars, theta, parent_a, parent_b) -> Optional[_Level]:
        if not isinstance(theta, Or) or len(theta.args) != 2:
            return None
        abset = set(abvars)
        yset = set(yvars)

        def split(disjunct):
            out = {}
            for atom in _conjuncts(disjunct):
                if not isinstance(atom, Equiv):
                    return None
                if isinstance(atom.rhs, Var) and atom.rhs.vid in abset:
                    out[atom.rhs.vid] = atom.lhs
                elif isinstance(atom.lhs, Var) and atom.lhs.vid in abset:
                    out[atom.lhs.vid] = atom.rhs
                else:
                    return None
            return out

        d0 = split(theta.args[0])
        d1 = split(theta.args[1])
        if d0 is None or d1 is None or set(d0) != abset or set(d1) != abset:
            return None

        def is_y(expr):
            return isinstance(expr, Var) and expr.vid in yset

        cand = None
        for left, right in ((d0, d1), (d1, d0)):
            a_vars = sorted(v for v in abvars if not is_y(left[v]))
            b_vars = sorted(v for v in abvars if is_y(left[v]))
            if not b_vars or len(a_vars) != len(b_vars):
                continue
            if all(is_y(right[v]) for v in a_vars) and \
                    all(not is_y(right[v]) for v in b_vars):
                cand = (left, right, tuple(a_vars), tuple(b_vars))
                break
        if cand is None:
            return None
        left, right, a_order, b_order = cand
        y_by_b = [left[v].vid for v in b_order]
        y_by_a = [right[v].vid for v in a_order]
        if sorted(y_by_b) != sorted(yvars) or y_by_a != y_by_b:
            return None

        def compile_src(expr):
            if isinstance(expr, Const):
                return ("const", expr.value)
            if not isinstance(expr, Var):
                return None
            vid = expr.vid
            if parent_a is not None and vid in parent_a:
                return ("a", parent_a[vid])
            if parent_b is not None and vid in parent_b:
                return ("b", parent_b[vid])
            return ("env", vid)

        lo_src = []
        for v in a_order:
            src = compile_src(left[v])
            if src is None or src[0] == "b":
                return None  # the lo endpoint must not depend on the hi endpoint
            lo_src.append(src)
        hi_src = []
        for v in b_order:
            src = compile_src(right[v])
            if src is None:
                return None
            hi_src.append(src)
        return _Level(tuple(yvars), a_order, b_order, tuple(lo_src), tuple(hi_src))

    def _src_bits(self, srcs, lo_key, hi_key, env) -> Optional[Tuple[bool, ...]]:
        out = []
        for kind, payload in srcs:
            if kind == "a":
                out.append(lo_key[payload])
            elif kind == "b":
                if hi_key is None:
                    return None
                out.append(hi_key[payload])
            elif kind == "const":
                out.append(payload)
            else:
                if payload not in env:
                    return None
                out.append(env[payload])
        return tuple(out)

    def _env_key(self, shape: _IntervalShape, env: Assignment) -> Tuple:
        inner = set(shape.levels[-1].a_order) | set(shape.levels[-1].b_order)
        bits = []
        for v in self.frees_of(shape.base):
            if v not in inner:
                bits.append(env.get(v))
        for lvl in shape.levels:
            for kind, payload in lvl.lo_src + lvl.hi_src:
                if kind == "env":
                    bits.append(env.get(payload))
        return tuple(bits)

    # interval semantics:
    #   INNER(k, aV, bV) = truth of the subformula below level k under
    #                      (a_k <- aV, b_k <- bV); for k = last level this is
    #                      the base formula itself.
    #   REACH(k, aV)     = { bV : INNER(k, aV, bV) }   (k counts levels 0-based,
    #                      exposed here via _iv_sols(k+1, aV))
    def _iv_sols(self, shape, k, lo_vals, env, tag):
        """REACH of the subformula below level k-1 (k = len(levels): base)."""
        memo_key = (tag, k, lo_vals, self._env_key(shape, env))
        hit = self._sols.get(memo_key)
        if hit is not None:
            return hit

        if k == len(shape.levels):
            result = self._base_sols(shape, lo_vals, env)
        else:
            level = shape.levels[k]
            child_lo = self._src_bits(level.lo_src, lo_vals, None, env)
            if child_lo is None:
                raise EvalError("interval lo endpoint not assigned")
            ends = self._reach_two(shape, k + 1, child_lo, env, tag)
            if ends == _TOP:
                result = _TOP
            else:
                result = self._invert_ends(level, lo_vals, ends, env)
        self._sols[memo_key] = result
        return result

    def _reach_two(self, shape, k, lo_vals, env, tag):
        """Two-hop composition of REACH at depth k."""
        memo_key = (tag, k, lo_vals, self._env_key(shape, env))
        hit = self._reach2.get(memo_key)
        if hit is not None:
            return hit
        mids = self._iv_sols(shape, k, lo_vals, env, tag)
        if mids == _TOP:
            if self._garbage_tuple(shape, env, tag) is not None and shape.identity_lo:
                result = _TOP
            else:
                raise GuardFallbackOverflow("unconstrained ladder level")
        else:
            result_set = set()
            result = None
            for mid in mids:
                ends = self._iv_sols(shape, k, mid, env, tag)
                if ends == _TOP:
                    result = _TOP
                    break
                for e in ends:
                    result_set.add(e)
                    if len(result_set) > self.sol_set_cap:
                        raise GuardFallbackOverflow("solution set exceeds cap")
            if result is None:
                result = sorted(result_set)
        self._reach2[memo_key] = result
        return result

    def _invert_ends(self, level: _Level, lo_vals, ends, env):
        width = len(level.hi_src)
        out = []
        seen = set()
        for end in ends:
            bits = [False] * width
            ok = True
            for pos, (kind, payload) in enumerate(level.hi_src):
                if kind == "b":
                    bits[payload] = end[pos]
                elif kind == "a":
                    if end[pos] != lo_vals[payload]:
                        ok = False
                        break
                elif kind == "const":
                    if end[pos] != payload:
                        ok = False
                        break
                else:
                    if payload not in env or end[pos] != env[payload]:
                        ok = False
                        break
            if ok:
                t = tuple(bits)
                if t not in seen:
                    seen.add(t)
                    out.append(t)
        return out

    def _interval_decide(self, node, shape: _IntervalShape, env: Assignment) -> bool:
        tag = id(node)
        top = shape.levels[0]
        lo_vals = self._src_bits(top.lo_src, None, None, env)
        hi_vals = self._src_bits(top.hi_src, None, None, env)
        if lo_vals is None or hi_vals is None:
            raise EvalError("interval endpoints not assigned")
        mids = self._iv_sols(shape, 1, lo_vals, env, tag)
        if mids == _TOP:
            garbage = self._garbage_tuple(shape, env, tag)
            for cand in filter(None, (garbage, hi_vals, lo_vals)):
                if self._iv_member(shape, 1, cand, hi_vals, env, tag):
                    return True
            if garbage is None:
                raise GuardFallbackOverflow(
                    "unconstrained midpoint with no resolving candidate")
            return False
        for mid in mids:
            self._spend()
            if self._iv_member(shape, 1, mid, hi_vals, env, tag):
                return True
        return False

    def _iv_member(self, shape, k, lo_vals, hi_vals, env, tag) -> bool:
        sols = self._iv_sols(shape, k, lo_vals, env, tag)
        if sols == _TOP:
            return True
        return hi_vals in sols if isinstance(sols, set) else hi_vals in sols

    def _garbage_tuple(self, shape, env, tag):
        """A tuple from which the base constrains nothing, if one exists."""
        cache_key = (tag, self._env_key(shape, env))
        if cache_key in self._garbage:
            return self._garbage[cache_key]
        found = None
        width = len(shape.levels[-1].a_order)
        candidates = [tuple([False] * width), tuple([True] * width)]
        seen = set(candidates)
        rounds = 0
        while candidates and rounds < 4096:
            cand = candidates.pop(0)
            rounds += 1
            if self._base_probe_top(shape, cand, env):
                found = cand
                break
            for i in range(width):
                flipped = cand[:i] + (not cand[i],) + cand[i + 1:]
                if flipped not in seen:
                    seen.add(flipped)
                    candidates.append(flipped)
        self._garbage[cache_key] = found
        return found

    # .. base relation ............................................................
    def _bind_base(self, shape, lo_vals, env) -> Assignment:
        sub = dict(env)
        for v, bit in zip(shape.levels[-1].a_order, lo_vals):
            sub[v] = bit
        return sub

    def _base_probe_top(self, shape, lo_vals, env) -> bool:
        sub = self._bind_base(shape, lo_vals, env)
        return self._body_vacuous(shape.base, sub, set(shape.levels[-1].b_order))

    def _base_sols(self, shape, lo_vals, env):
        level = shape.levels[-1]
        sub = self._bind_base(shape, lo_vals, env)
        targets = set(level.b_order)
        b_order = list(level.b_order)

        pins: Assignment = {}
        for conj in _conjuncts(shape.base):
            frees = set(self.frees_of(conj))
            if not (frees & targets):
                if not self.decide(conj, sub):
                    return []
                continue
            got = self._conjunct_pins(conj, sub, targets)
            if got is None:
                continue
            if got == _UNSAT:
                return []
            for vid, val in got.items():
                if vid in pins and pins[vid] != val:
                    return []
                pins[vid] = val

        if not pins and self._body_vacuous(shape.base, sub, targets):
            return _TOP

        remaining = [v for v in b_order if v not in pins]
        if (1 << min(len(remaining), 60)) > self.sol_enum_cap:
            raise GuardFallbackOverflow(
                f"{len(remaining)} unpinned solution bits exceed the cap")
        sub.update(pins)
        out = []

        def emit_all(idx: int):
            if idx == len(remaining):
                out.append(tuple(sub[v] for v in b_order))
                if len(out) > self.sol_set_cap:
                    raise GuardFallbackOverflow("solution set exceeds cap")
                return
            for bit in (False, True):
                sub[remaining[idx]] = bit
                emit_all(idx + 1)
            del sub[remaining[idx]]

        def collect(idx: int):
            early = self.eval3(shape.base, sub)
            if early is False:
                return
            if early is True:
                emit_all(idx)
                return
            if idx == len(remaining):
                self._spend()
                if self.decide(shape.base, sub):
                    out.append(tuple(sub[v] for v in b_order))
                    if len(out) > self.sol_set_cap:
                        raise GuardFallbackOverflow("solution set exceeds cap")
                return
            vid = remaining[idx]
            for bit in (False, True):
                sub[vid] = bit
                collect(idx + 1)
            del sub[vid]

        collect(0)
        return out

    def _conjunct_pins(self, conj, env, targets):
        """Pins a guarded implication imposes on target variables.

        Returns None when not applicable, _UNSAT when the fired implication
        cannot be satisfied by any target assignment, else a dict of pins.
        """
        if not (isinstance(conj, Forall) and isinstance(conj.body, Implies)):
            return None
        premise = conj.body.lhs
        if (set(self.frees_of(premise)) & targets) - set(conj.vars):
            return None
        fired = self._fired_combos(conj, env)
        if fired is None:
            return None
        pins: Assignment = {}
        for sub, free in fired:
            for atom in _conjuncts(conj.body.rhs):
                if not isinstance(atom, Equiv):
                    continue
                for var_side, expr_side in ((atom.lhs, atom.rhs),
                                            (atom.rhs, atom.lhs)):
                    if not (isinstance(var_side, Var) and var_side.vid in targets):
                        continue
                    if isinstance(expr_side, Var) and expr_side.vid in free:
                        return _UNSAT  # must equal every value of a free bit
                    val = self.eval3(expr_side, sub)
                    if val is None:
                        continue
                    if var_side.vid in pins and pins[var_side.vid] != val:
                        return _UNSAT
                    pins[var_side.vid] = val
        return pins

    def _body_vacuous(self, body, env, targets) -> bool:
        """True when every target-touching conjunct is a guarded implication
        whose premise is target-free and never fires under env."""
        for conj in _conjuncts(body):
            frees = set(self.frees_of(conj))
            if not (frees & targets):
                continue
            if not (isinstance(conj, Forall) and isinstance(conj.body, Implies)):
                return False
            premise = conj.body.lhs
            if (set(self.frees_of(premise)) & targets) - set(conj.vars):
                return False
            fired = self._fired_combos(conj, env)
            if fired is None or fired:
                return False
        return True

    # .. universal closure over a ladder premise ..................................
    def _decide_ladder_closure(self, node: Forall, env: Assignment,
                               pins: Assignment) -> Optional[bool]:
        body = node.body
        if not isinstance(body, Implies):
            return None
        ladder = None
        others: List[Formula] = []
        for conj in _conjuncts(body.lhs):
            if isinstance(conj, Exists) and self._interval_shape(conj) is not None:
                if ladder is not None:
                    return None
                ladder = conj
            else:
                others.append(conj)
        if ladder is None:
            return None
        shape = self._interval_shape(ladder)
        top = shape.levels[0]

        lo_env = {payload for kind, payload in top.lo_src if kind == "env"}
        block = set(node.vars)
        target_positions: List[Tuple[int, VarId]] = []
        target_set: Set[VarId] = set()
        for pos, (kind, payload) in enumerate(top.hi_src):
            if kind == "env" and payload in block and payload not in lo_env \
                    and payload not in env:
                target_positions.append((pos, payload))
                target_set.add(payload)
        if not target_set:
            return None

        concl = body.rhs
        start = dict(env)
        for vid, val in pins.items():
            if vid not in target_set:
                start[vid] = val
        pre_vars = [v for v in node.vars if v not in target_set and v not in start]

        oracle_here = self.oracle if body is self.oracle_site else None
        tag = id(ladder)

        def prune(sub: Assignment) -> Optional[bool]:
            if oracle_here is not None and oracle_here.ok(sub) is False:
                return True
            for conj in others:
                if self.eval3(conj, sub) is False:
                    return True
            return None

        def leaf(sub: Assignment) -> bool:
            for conj in others:
                if not self.decide(conj, sub):
                    return True
            if oracle_here is not None:
                ok = oracle_here.ok(sub)
                if ok is None:
                    raise EvalError("oracle probes must be closure variables")
                if not ok:
                    return True
            lo_vals = self._src_bits(top.lo_src, None, None, sub)
            if lo_vals is None:
                raise EvalError("ladder lo endpoint not assigned")
            ends = self._reach_two(shape, 1, lo_vals, sub, tag)
            if ends == _TOP:
                return not self._violation_exists(concl, sub, [v for _, v in
                                                               target_positions])
            fixed = []
            for pos, (kind, payload) in enumerate(top.hi_src):
                if kind == "const":
                    fixed.append((pos, payload))
                elif kind == "a":
                    fixed.append((pos, lo_vals[payload]))
                elif kind == "env" and payload not in target_set:
                    if payload not in sub:
                        raise EvalError("ladder hi endpoint partially unassigned")
                    fixed.append((pos, sub[payload]))
            for end in ends:
                if any(end[pos] != bit for pos, bit in fixed):
                    continue
                full = dict(sub)
                for pos, vid in target_positions:
                    full[vid] = end[pos]
                self._spend()
                if not self.decide(concl, full):
                    return False
            return True

        return self._dfs(pre_vars, start, leaf, want_all=True, prune=prune)

    def _violation_exists(self, concl, env, target_vids) -> bool:
        def leaf(sub: Assignment) -> bool:
            return not self.decide(concl, sub)

        def prune(sub: Assignment) -> Optional[bool]:
            v = self.eval3(concl, sub)
            if v is None:
                return None
            return not v

        return self._dfs(list(target_vids), env, leaf, want_all=False, prune=prune)
