"""Continuous-time gradient-flow dynamics whose attractors are SAT solutions.

The search state couples hypercube coordinates s (one per variable, in
[-1, 1]) with one exponentially growing weight per clause, integrated here
in log domain (b_m = ln a_m) so positivity is structural and overflow is a
single guarded comparison.  Per clause m the analog cost is

    K_m(s) = 2^(-k) * prod_j (1 - c_mj * s_j)      over literals j of m,

zero exactly when some literal is satisfied.  The flow is gradient descent
on V = sum_m a_m K_m^2 in s, coupled with db_m/dt = K_m.  Trajectories are
advanced by an adaptive Dormand-Prince 5(4) pair; after every accepted step
s is clamped to the hypercube, and the orthant's Boolean assignment is
checked so a solution is reported as soon as its orthant is entered.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from numba import njit

from .formula import Formula, evaluate

# Dormand-Prince 5(4) tableau.  Row i of _DP_A holds the coefficients of
# stage i+2; _DP_B5 is the 5th-order propagation row; _DP_E the embedded
# error row (includes the trailing first-same-as-last stage).
_DP_A = np.array([
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                  -17253 / 339200, 22 / 525, -1 / 40])

_MIN_STEP = 1e-14

SOLVED_CODE = 0
TIME_BUDGET_CODE = 1
OVERFLOW_CODE = 2
STALL_CODE = 3

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


class TrajectoryStatus(Enum):
    SOLVED = "SOLVED"
    TIME_BUDGET = "TIME_BUDGET"
    OVERFLOW = "OVERFLOW"


class IntegrationStallError(RuntimeError):
    """Adaptive step shrank below the representable floor; run is censored."""


@dataclass
class ContinuousState:
    """Point (s, ln a) of the coupled system at analog time t."""

    s: np.ndarray
    log_a: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    dt_init: float = 1e-3
    dt_max: float = 1.0
    t_max: float = 1000.0
    log_a_cap: float = 600.0
    max_steps: int = 2_000_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "dt_init", "dt_max", "t_max", "log_a_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rel_tol > 1e-3:
            raise ValueError("rel_tol above 1e-3 is not supported")


@dataclass
class TrajectoryOutcome:
    status: TrajectoryStatus
    solution: Optional[np.ndarray]
    t_solve: Optional[float]
    steps: int
    wall_time: float
    final_state: ContinuousState = field(repr=False, default=None)


def initial_state(f: Formula, s, log_a=None, t: float = 0.0) -> ContinuousState:
    s = np.asarray(s, dtype=np.float64).copy()
    if s.shape != (f.n,):
        raise ValueError(f"s must have shape ({f.n},)")
    if np.any(np.abs(s) > 1):
        raise ValueError("s outside the hypercube")
    if log_a is None:
        log_a = np.zeros(f.m)
    log_a = np.asarray(log_a, dtype=np.float64).copy()
    if log_a.shape != (f.m,):
        raise ValueError(f"log_a must have shape ({f.m},)")
    return ContinuousState(s=s, log_a=log_a, t=t)


# ---------------------------------------------------------------------------
# Cost and energy
# ---------------------------------------------------------------------------

def clause_cost(f: Formula, m: int, s) -> float:
    """Analog cost of clause m at point s; in [0,1], zero iff satisfied."""
    s = np.asarray(s, dtype=np.float64)
    prod = 2.0 ** -f.k
    for v, sign in f.clauses[m]:
        prod *= 1.0 - sign * s[v]
    return prod


def _all_costs(f: Formula, s: np.ndarray) -> np.ndarray:
    if f.m == 0:
        return np.zeros(0)
    lit = 1.0 - f.signs * s[f.var_index]
    return (2.0 ** -f.k) * lit.prod(axis=1)


def energy(f: Formula, s, log_a) -> float:
    """Weighted energy sum_m a_m K_m^2; zero exactly on solutions."""
    s = np.asarray(s, dtype=np.float64)
    log_a = np.asarray(log_a, dtype=np.float64)
    if log_a.size and np.max(log_a) > 700.0:
        raise OverflowError("auxiliary weight exp(log_a) overflows")
    costs = _all_costs(f, s)
    return float(np.sum(np.exp(log_a) * costs * costs))


def raw_energy(f: Formula, s) -> float:
    """Unweighted energy sum_m K_m^2 (all clause weights equal to one)."""
    costs = _all_costs(f, np.asarray(s, dtype=np.float64))
    return float(np.sum(costs * costs))


# ---------------------------------------------------------------------------
# Right-hand side and integration kernels (numba)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _rhs_vec(vidx, vsgn, scale, n, y, dy):
    """dy/dt for the packed state y = (s_1..s_N, b_1..b_M)."""
    mm, kk = vidx.shape
    for i in range(n):
        dy[i] = 0.0
    lit = np.empty(kk)
    pre = np.empty(kk + 1)
    suf = np.empty(kk + 1)
    for m in range(mm):
        for j in range(kk):
            lit[j] = 1.0 - vsgn[m, j] * y[vidx[m, j]]
        pre[0] = 1.0
        for j in range(kk):
            pre[j + 1] = pre[j] * lit[j]
        suf[kk] = 1.0
        for j in range(kk - 1, -1, -1):
            suf[j] = suf[j + 1] * lit[j]
        cost = scale * pre[kk]
        dy[n + m] = cost
        if cost != 0.0:
            drive = 2.0 * math.exp(y[n + m]) * cost * scale
            for j in range(kk):
                dy[vidx[m, j]] += drive * vsgn[m, j] * pre[j] * suf[j + 1]


@njit(cache=True, nogil=True)
def _orthant_satisfied(vidx, vsgn, y):
    mm, kk = vidx.shape
    for m in range(mm):
        sat = False
        for j in range(kk):
            if vsgn[m, j] * y[vidx[m, j]] > 0.0:
                sat = True
                break
        if not sat:
            return False
    return True


@njit(cache=True, nogil=True)
def _energies(vidx, vsgn, scale, n, y):
    mm, kk = vidx.shape
    v = 0.0
    e = 0.0
    for m in range(mm):
        prod = scale
        for j in range(kk):
            prod *= 1.0 - vsgn[m, j] * y[vidx[m, j]]
        e += prod * prod
        v += math.exp(y[n + m]) * prod * prod
    return v, e


@njit(cache=True, nogil=True)
def _orthant_hash(y, n):
    h = _FNV_OFFSET
    for i in range(n):
        bit = np.uint64(1) if y[i] > 0.0 else np.uint64(0)
        h = (h ^ bit) * _FNV_PRIME
    return h


@njit(cache=True, nogil=True)
def _integrate_kernel(vidx, vsgn, scale, n, y, rel_tol, abs_tol, dt_init, dt_max,
                      t_max, log_a_cap, max_steps, trace, trace_cap):
    """Advance y in place; returns (status, t_solve, t, steps, trace_rows).

    trace is a (trace_cap, 5) array receiving (t, V, E, max b, orthant hash)
    per accepted step when trace_cap > 0.
    """
    dim = y.shape[0]
    mm = dim - n
    stages = np.empty((7, dim))
    ytmp = np.empty(dim)
    ynew = np.empty(dim)
    pattern = np.zeros(n, dtype=np.uint8)
    pattern_valid = False

    t = 0.0
    h = dt_init
    steps = 0
    trace_rows = 0
    t_solve = -1.0

    # clamp the start point, then check its orthant before stepping
    for i in range(n):
        if y[i] > 1.0:
            y[i] = 1.0
        elif y[i] < -1.0:
            y[i] = -1.0
    zero = False
    for i in range(n):
        if y[i] == 0.0:
            zero = True
            break
    if not zero:
        for i in range(n):
            pattern[i] = 1 if y[i] > 0.0 else 0
        pattern_valid = True
        if _orthant_satisfied(vidx, vsgn, y):
            return SOLVED_CODE, 0.0, t, steps, trace_rows

    _rhs_vec(vidx, vsgn, scale, n, y, stages[0])
    k1_valid = True

    while True:
        if steps >= max_steps:
            return TIME_BUDGET_CODE, t_solve, t, steps, trace_rows
        rem = t_max - t
        if rem <= 1e-13:
            return TIME_BUDGET_CODE, t_solve, t, steps, trace_rows
        if h > dt_max:
            h = dt_max
        if h > rem:
            h = rem
        if h < _MIN_STEP:
            return STALL_CODE, t_solve, t, steps, trace_rows

        if not k1_valid:
            _rhs_vec(vidx, vsgn, scale, n, y, stages[0])
            k1_valid = True

        for st in range(1, 6):
            for i in range(dim):
                acc = 0.0
                for j in range(st):
                    aij = _DP_A[st - 1, j]
                    if aij != 0.0:
                        acc += aij * stages[j, i]
                ytmp[i] = y[i] + h * acc
            _rhs_vec(vidx, vsgn, scale, n, ytmp, stages[st])

        for i in range(dim):
            acc = 0.0
            for j in range(6):
                bj = _DP_B5[j]
                if bj != 0.0:
                    acc += bj * stages[j, i]
            ynew[i] = y[i] + h * acc
        _rhs_vec(vidx, vsgn, scale, n, ynew, stages[6])

        err = 0.0
        for i in range(dim):
            ei = 0.0
            for j in range(7):
                cj = _DP_E[j]
                if cj != 0.0:
                    ei += cj * stages[j, i]
            ei *= h
            ya = abs(y[i])
            yb = abs(ynew[i])
            sc = abs_tol + rel_tol * (ya if ya > yb else yb)
            ei /= sc
            err += ei * ei
        err = math.sqrt(err / dim)

        if not math.isfinite(err):
            h *= 0.1
            continue
        if err > 1.0:
            factor = 0.9 * err ** -0.2
            if factor < 0.2:
                factor = 0.2
            h *= factor
            continue

        # accepted
        t = t + h
        steps += 1
        clamped = False
        for i in range(n):
            if ynew[i] > 1.0:
                ynew[i] = 1.0
                clamped = True
            elif ynew[i] < -1.0:
                ynew[i] = -1.0
                clamped = True
        for i in range(dim):
            y[i] = ynew[i]
        if clamped:
            k1_valid = False
        else:
            for i in range(dim):
                stages[0, i] = stages[6, i]
            k1_valid = True

        if trace_cap > 0 and trace_rows < trace_cap:
            v_en, e_en = _energies(vidx, vsgn, scale, n, y)
            bmax_tr = -math.inf
            for m in range(mm):
                if y[n + m] > bmax_tr:
                    bmax_tr = y[n + m]
            trace[trace_rows, 0] = t
            trace[trace_rows, 1] = v_en
            trace[trace_rows, 2] = e_en
            trace[trace_rows, 3] = bmax_tr
            trace[trace_rows, 4] = float(_orthant_hash(y, n) >> np.uint64(12))
            trace_rows += 1

        bmax = -math.inf
        for m in range(mm):
            if y[n + m] > bmax:
                bmax = y[n + m]
        if mm > 0 and bmax > log_a_cap:
            return OVERFLOW_CODE, t_solve, t, steps, trace_rows

        zero = False
        for i in range(n):
            if y[i] == 0.0:
                zero = True
                break
        if not zero:
            changed = not pattern_valid
            for i in range(n):
                bit = 1 if y[i] > 0.0 else 0
                if bit != pattern[i]:
                    pattern[i] = bit
                    changed = True
            pattern_valid = True
            if changed and _orthant_satisfied(vidx, vsgn, y):
                return SOLVED_CODE, t, t, steps, trace_rows

        if err == 0.0:
            factor = 5.0
        else:
            factor = 0.9 * err ** -0.2
            if factor > 5.0:
                factor = 5.0
            elif factor < 0.2:
                factor = 0.2
        h *= factor


def velocity(f: Formula, state: ContinuousState) -> tuple[np.ndarray, np.ndarray]:
    """Analytic flow (ds/dt, d(ln a)/dt) at the given state.

    ds_i/dt = sum_m 2 a_m c_mi K_mi K_m with K_mi the clause cost with
    literal i left out; d(ln a_m)/dt = K_m.  Evaluates the same compiled
    right-hand side the integrator uses.
    """
    if state.s.shape != (f.n,) or state.log_a.shape != (f.m,):
        raise ValueError("state does not match formula dimensions")
    if f.m and np.max(state.log_a) > 700.0:
        raise OverflowError("auxiliary weight exp(log_a) overflows")
    y = np.concatenate([state.s, state.log_a])
    dy = np.empty_like(y)
    _rhs_vec(f.var_index, f.signs, 2.0 ** -f.k, f.n, y, dy)
    return dy[:f.n], dy[f.n:]


def integrate(f: Formula, init: ContinuousState, cfg: IntegratorConfig = IntegratorConfig(),
              trace_path=None, trace_cap: int = 200_000) -> TrajectoryOutcome:
    """Run one trajectory to solution, budget exhaustion, or weight overflow.

    Deterministic: identical (formula, init, cfg) give identical outcomes
    and step counts.  Raises IntegrationStallError if the adaptive step
    underflows; callers count such runs as censored.
    """
    if init.s.shape != (f.n,) or init.log_a.shape != (f.m,):
        raise ValueError("initial state does not match formula dimensions")
    y = np.concatenate([init.s, init.log_a])
    cap = trace_cap if trace_path is not None else 0
    trace = np.empty((cap, 5)) if cap > 0 else np.empty((0, 5))

    start = time.perf_counter()
    code, t_solve, t_end, steps, trace_rows = _integrate_kernel(
        f.var_index, f.signs, 2.0 ** -f.k, f.n, y,
        cfg.rel_tol, cfg.abs_tol, cfg.dt_init, cfg.dt_max,
        cfg.t_max, cfg.log_a_cap, cfg.max_steps, trace, cap)
    wall = time.perf_counter() - start

    if trace_path is not None and trace_rows:
        _write_trace(trace_path, trace[:trace_rows])

    final = ContinuousState(s=y[:f.n].copy(), log_a=y[f.n:].copy(), t=t_end)
    if code == STALL_CODE:
        raise IntegrationStallError(
            f"step size underflow at t={t_end:.6g} after {steps} steps")
    if code == SOLVED_CODE:
        solution = y[:f.n] > 0.0
        sat, _ = evaluate(f, solution)
        assert sat, "internal error: solved orthant failed verification"
        return TrajectoryOutcome(TrajectoryStatus.SOLVED, solution, float(t_solve),
                                 steps, wall, final)
    status = TrajectoryStatus.TIME_BUDGET if code == TIME_BUDGET_CODE else TrajectoryStatus.OVERFLOW
    return TrajectoryOutcome(status, None, None, steps, wall, final)


def _write_trace(path, rows: np.ndarray) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("t,V,E,max_log_a,orthant\n")
        for r in rows:
            fh.write(f"{float(r[0])!r},{float(r[1])!r},{float(r[2])!r},"
                     f"{float(r[3])!r},{int(r[4])}\n")
