"""CNF formula model, random k-SAT ensembles, DIMACS interchange, DPLL solving.

A formula is a conjunction of m clauses over n Boolean variables, every
clause holding exactly k signed literals on distinct variables.  This is the
sparse form of the m-by-n sign matrix that the continuous dynamics consumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .util import STREAM_FORMULA, fnv1a64, hash_hex, substream

Literal = tuple[int, int]  # (variable index, sign in {+1, -1})
Assignment = np.ndarray    # length-n vector of Booleans


class FormulaError(ValueError):
    """Clause or ensemble specification violates the formula invariants."""


class DimacsError(ValueError):
    """Malformed DIMACS input; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class OrthantError(ValueError):
    """A coordinate sits exactly on an orthant boundary (s_i == 0)."""


def _check_clause(clause: Sequence[Literal], n: int, k: int) -> tuple[Literal, ...]:
    clause = tuple((int(v), int(s)) for v, s in clause)
    if len(clause) != k:
        raise FormulaError(f"clause has {len(clause)} literals, expected {k}")
    seen = set()
    for v, s in clause:
        if not 0 <= v < n:
            raise FormulaError(f"variable {v} outside [0, {n})")
        if s not in (1, -1):
            raise FormulaError(f"sign {s} not in {{+1, -1}}")
        if v in seen:
            raise FormulaError(f"variable {v} repeated within clause")
        seen.add(v)
    return clause


@dataclass(frozen=True)
class Formula:
    """Immutable k-CNF formula; safe to share across worker threads."""

    n: int
    k: int
    clauses: tuple[tuple[Literal, ...], ...]

    def __post_init__(self):
        if self.n < 1:
            raise FormulaError("need at least one variable")
        if self.k < 0 or (self.m > 0 and self.k < 1):
            raise FormulaError("k must be >= 1 for a non-empty formula")
        object.__setattr__(
            self, "clauses",
            tuple(_check_clause(c, self.n, self.k) for c in self.clauses))

    @property
    def m(self) -> int:
        return len(self.clauses)

    @property
    def alpha(self) -> float:
        return self.m / self.n

    # Dense index/sign arrays used by the numeric kernels.
    @cached_property
    def var_index(self) -> np.ndarray:
        out = np.zeros((self.m, max(self.k, 1)), dtype=np.int64)
        for mi, clause in enumerate(self.clauses):
            for j, (v, _) in enumerate(clause):
                out[mi, j] = v
        return out

    @cached_property
    def signs(self) -> np.ndarray:
        out = np.zeros((self.m, max(self.k, 1)), dtype=np.float64)
        for mi, clause in enumerate(self.clauses):
            for j, (_, s) in enumerate(clause):
                out[mi, j] = s
        return out


def make_formula(n: int, clauses: Iterable[Sequence[Literal]], k: Optional[int] = None) -> Formula:
    clauses = tuple(tuple(c) for c in clauses)
    if k is None:
        k = len(clauses[0]) if clauses else 0
    return Formula(n=n, k=k, clauses=clauses)


@dataclass(frozen=True)
class EnsembleSpec:
    """Uniform random k-SAT ensemble at constraint density alpha = m/n."""

    n: int
    k: int
    alpha: float
    count: int
    seed: int

    def __post_init__(self):
        if self.k > self.n:
            raise FormulaError(f"k={self.k} exceeds n={self.n}")
        if self.k < 1:
            raise FormulaError("k must be >= 1")
        if self.m < 1:
            raise FormulaError(f"alpha={self.alpha} gives zero clauses at n={self.n}")
        if self.count < 1:
            raise FormulaError("count must be >= 1")

    @property
    def m(self) -> int:
        # round half up for symmetric treatment across an alpha grid
        return int(math.floor(self.alpha * self.n + 0.5))


def random_clause(rng: np.random.Generator, n: int, k: int) -> tuple[Literal, ...]:
    """One uniform clause: k distinct variables, independent fair signs."""
    variables = rng.choice(n, size=k, replace=False)
    signs = 1 - 2 * rng.integers(0, 2, size=k)
    return tuple((int(v), int(s)) for v, s in zip(variables, signs))


def random_ksat(spec: EnsembleSpec, index: int) -> Formula:
    """Draw formula `index` of the ensemble; pure function of (seed, index).

    Each clause picks k distinct variables uniformly without replacement and
    independent fair signs; duplicate clauses are permitted.
    """
    if not 0 <= index < spec.count:
        raise FormulaError(f"index {index} outside ensemble of {spec.count}")
    rng = substream(spec.seed, STREAM_FORMULA, index)
    clauses = tuple(random_clause(rng, spec.n, spec.k) for _ in range(spec.m))
    return Formula(n=spec.n, k=spec.k, clauses=clauses)


def evaluate(f: Formula, assignment) -> tuple[bool, int]:
    """Check an assignment, returning (satisfied, number of violated clauses)."""
    bits = np.asarray(assignment, dtype=bool)
    if bits.shape != (f.n,):
        raise FormulaError(f"assignment length {bits.shape} does not match n={f.n}")
    if f.m == 0:
        return True, 0
    spin = np.where(bits, 1.0, -1.0)
    lit_true = f.signs * spin[f.var_index] > 0
    unsat = int(f.m - np.count_nonzero(lit_true.any(axis=1)))
    return unsat == 0, unsat


def assignment_from_orthant(s) -> np.ndarray:
    """Map a hypercube point to the Boolean assignment of its orthant."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s == 0.0):
        raise OrthantError("coordinate exactly zero: orthant undefined")
    return s > 0.0


def add_clause(f: Formula, clause: Sequence[Literal]) -> Formula:
    """Return a new formula with one clause appended; the original is untouched."""
    k = f.k if f.m > 0 else len(clause)
    checked = _check_clause(clause, f.n, k)
    return Formula(n=f.n, k=k, clauses=f.clauses + (checked,))


# ---------------------------------------------------------------------------
# DIMACS CNF interchange
# ---------------------------------------------------------------------------

def dimacs_write(f: Formula) -> str:
    lines = [f"p cnf {f.n} {f.m}"]
    for clause in f.clauses:
        lines.append(" ".join(str((v + 1) * s) for v, s in clause) + " 0")
    return "\n".join(lines) + "\n"


def dimacs_read(text: str) -> Formula:
    n = m = None
    clauses: list[tuple[Literal, ...]] = []
    current: list[Literal] = []
    current_vars: set[int] = set()
    k = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            if n is not None:
                raise DimacsError("duplicate header", lineno)
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"malformed header {line!r}", lineno)
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError(f"malformed header {line!r}", lineno) from None
            if n < 1 or m < 0:
                raise DimacsError(f"bad sizes in header {line!r}", lineno)
            continue
        if n is None:
            raise DimacsError("clause before header", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(f"bad literal {tok!r}", lineno) from None
            if lit == 0:
                if not current:
                    raise DimacsError("empty clause", lineno)
                if k is None:
                    k = len(current)
                elif len(current) != k:
                    raise DimacsError(
                        f"clause of length {len(current)} in a {k}-uniform formula", lineno)
                clauses.append(tuple(current))
                current = []
                current_vars = set()
                continue
            v = abs(lit) - 1
            if not 0 <= v < n:
                raise DimacsError(f"variable {abs(lit)} > n={n}", lineno)
            if v in current_vars:
                raise DimacsError(f"variable {abs(lit)} repeated within clause", lineno)
            current_vars.add(v)
            current.append((v, 1 if lit > 0 else -1))
    last = len(text.splitlines())
    if n is None:
        raise DimacsError("missing header", last)
    if current:
        raise DimacsError("unterminated clause at end of input", last)
    if len(clauses) != m:
        raise DimacsError(f"header declares {m} clauses, found {len(clauses)}", last)
    return Formula(n=n, k=k if k is not None else 0, clauses=tuple(clauses))


def formula_hash(f: Formula) -> int:
    """64-bit FNV-1a content hash of the canonical DIMACS serialization."""
    return fnv1a64(dimacs_write(f).encode("ascii"))


def formula_hash_hex(f: Formula) -> str:
    return hash_hex(formula_hash(f))


# ---------------------------------------------------------------------------
# DPLL with unit propagation and pure-literal elimination
# ---------------------------------------------------------------------------

class SatStatus(Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    TIMEOUT = "TIMEOUT"


@dataclass
class DpllResult:
    status: SatStatus
    assignment: Optional[np.ndarray]
    decisions: int


def dpll_sat(f: Formula, budget: int = 1_000_000) -> DpllResult:
    """Complete backtracking search; SAT results carry a verified witness.

    Counter-based state (satisfied/free literals per clause) with an
    assignment trail, branching on the most-occurring free variable among
    still-unsatisfied clauses.  Pure literals are assigned without a
    branching alternative.  `budget` caps the number of decisions; on
    exhaustion the instance is reported TIMEOUT, never UNSAT.
    """
    n, m = f.n, f.m
    if m == 0:
        return DpllResult(SatStatus.SAT, np.zeros(n, dtype=bool), 0)

    # occ[2*v] / occ[2*v+1]: clauses where v occurs positively / negatively
    occ: list[list[int]] = [[] for _ in range(2 * n)]
    for ci, clause in enumerate(f.clauses):
        for v, s in clause:
            occ[2 * v + (0 if s > 0 else 1)].append(ci)

    assign = [-1] * n              # -1 unassigned, else 0/1
    sat_by = [0] * m               # count of true literals per clause
    free = [len(c) for c in f.clauses]  # unassigned literals per clause
    # active occurrence counts over not-yet-satisfied clauses (pure-literal
    # detection and the branching heuristic)
    act_pos = [len(occ[2 * v]) for v in range(n)]
    act_neg = [len(occ[2 * v + 1]) for v in range(n)]
    n_unsat = m

    trail: list[int] = []          # assigned variables in order
    trail_forced: list[bool] = []  # True when not a decision (unit/pure)
    pending_units: list[int] = [ci for ci in range(m) if free[ci] == 1]
    decisions = 0

    def on_clause_satisfied(ci: int) -> None:
        for v, s in f.clauses[ci]:
            if s > 0:
                act_pos[v] -= 1
            else:
                act_neg[v] -= 1

    def on_clause_unsatisfied(ci: int) -> None:
        for v, s in f.clauses[ci]:
            if s > 0:
                act_pos[v] += 1
            else:
                act_neg[v] += 1

    def set_var(v: int, value: int) -> bool:
        """Assign and update counters; returns False on conflict."""
        nonlocal n_unsat
        assign[v] = value
        true_lit = 2 * v + (0 if value == 1 else 1)
        false_lit = 2 * v + (1 if value == 1 else 0)
        for ci in occ[true_lit]:
            if sat_by[ci] == 0:
                n_unsat -= 1
                on_clause_satisfied(ci)
            sat_by[ci] += 1
            free[ci] -= 1
        conflict = False
        for ci in occ[false_lit]:
            free[ci] -= 1
            if sat_by[ci] == 0:
                if free[ci] == 0:
                    conflict = True
                elif free[ci] == 1:
                    pending_units.append(ci)
        return not conflict

    def unset_var(v: int) -> None:
        nonlocal n_unsat
        value = assign[v]
        true_lit = 2 * v + (0 if value == 1 else 1)
        false_lit = 2 * v + (1 if value == 1 else 0)
        for ci in occ[true_lit]:
            sat_by[ci] -= 1
            free[ci] += 1
            if sat_by[ci] == 0:
                n_unsat += 1
                on_clause_unsatisfied(ci)
        for ci in occ[false_lit]:
            free[ci] += 1
        assign[v] = -1

    def propagate() -> bool:
        """Assign all forced literals (units, then pures); False on conflict."""
        while True:
            while pending_units:
                ci = pending_units.pop()
                if sat_by[ci] != 0 or free[ci] != 1:
                    continue  # stale queue entry
                for v, s in f.clauses[ci]:
                    if assign[v] == -1:
                        trail.append(v)
                        trail_forced.append(True)
                        if not set_var(v, 1 if s > 0 else 0):
                            return False
                        break
            pure = None
            for v in range(n):
                if assign[v] == -1 and (act_pos[v] > 0) != (act_neg[v] > 0):
                    pure = (v, 1 if act_pos[v] > 0 else 0)
                    break
            if pure is None:
                return True
            v, value = pure
            trail.append(v)
            trail_forced.append(True)
            if not set_var(v, value):
                return False

    def backtrack_to_decision() -> Optional[int]:
        """Undo through the most recent decision; return its variable."""
        while trail:
            v = trail.pop()
            was_forced = trail_forced.pop()
            unset_var(v)
            if not was_forced:
                return v
        return None

    # stack of (decision var, value tried first) for flip-on-conflict
    pending_flip: list[tuple[int, int]] = []

    ok = propagate()
    while True:
        if not ok:
            # conflict: flip the most recent unflipped decision
            pending_units.clear()
            while True:
                v = backtrack_to_decision()
                if v is None:
                    return DpllResult(SatStatus.UNSAT, None, decisions)
                dv, first = pending_flip.pop()
                assert dv == v
                if first is not None:
                    trail.append(v)
                    trail_forced.append(False)
                    pending_flip.append((v, None))
                    ok = set_var(v, 1 - first) and propagate()
                    break
        elif n_unsat == 0:
            bits = np.array([a == 1 for a in assign], dtype=bool)
            sat, _ = evaluate(f, bits)
            assert sat, "internal error: DPLL witness failed verification"
            return DpllResult(SatStatus.SAT, bits, decisions)
        else:
            if decisions >= budget:
                return DpllResult(SatStatus.TIMEOUT, None, decisions)
            decisions += 1
            best_v, best_score = -1, -1
            for v in range(n):
                if assign[v] == -1:
                    score = act_pos[v] + act_neg[v]
                    if score > best_score:
                        best_v, best_score = v, score
            assert best_v >= 0
            value = 1 if act_pos[best_v] >= act_neg[best_v] else 0
            trail.append(best_v)
            trail_forced.append(False)
            pending_flip.append((best_v, value))
            ok = set_var(best_v, value) and propagate()
