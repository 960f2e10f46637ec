"""Brute-force solution-space analysis for small instances.

Enumerates all satisfying assignments by a Gray-code sweep (each step flips
one variable and re-checks only the clauses touching it), groups solutions
into clusters connected by single-variable flips, classifies frozen/free
variables per cluster, and builds metastable traps by blocking a cluster
with the clause that negates a set of its frozen values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .formula import Formula, add_clause, evaluate
from .util import fnv1a64

DEFAULT_N_CAP = 24


class EnumerationRefusedError(ValueError):
    """Instance exceeds the exhaustive-scan variable cap."""


class CannotBlockError(ValueError):
    """Cluster has fewer frozen variables than the clause width k."""


class UnionFind:
    """Disjoint sets over 0..n-1 with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


@njit(cache=True, nogil=True)
def _gray_scan(n, ptr, cls, sgn, init_true, out):
    """Sweep all 2^n assignments; store solution codes, return their count.

    ptr/cls/sgn: per-variable CSR of (clause, sign) incidences.
    init_true: per-clause count of literals true at the all-False start.
    Codes put variable 0 in the most significant bit, so sorted codes are
    in lexicographic assignment order.
    """
    m = init_true.shape[0]
    true_count = init_true.copy()
    unsat = 0
    for c in range(m):
        if true_count[c] == 0:
            unsat += 1
    x = np.zeros(n, dtype=np.uint8)
    code = np.uint64(0)
    count = 0
    if unsat == 0:
        if count < out.shape[0]:
            out[count] = code
        count += 1
    total = np.uint64(1) << np.uint64(n)
    t = np.uint64(1)
    while t < total:
        # flipped variable = number of trailing zeros of t
        j = 0
        while (t >> np.uint64(j)) & np.uint64(1) == np.uint64(0):
            j += 1
        v = 1 - x[j]
        x[j] = v
        code ^= np.uint64(1) << np.uint64(n - 1 - j)
        for p in range(ptr[j], ptr[j + 1]):
            c = cls[p]
            lit_true = (sgn[p] > 0) == (v == 1)
            if lit_true:
                true_count[c] += 1
                if true_count[c] == 1:
                    unsat -= 1
            else:
                true_count[c] -= 1
                if true_count[c] == 0:
                    unsat += 1
        if unsat == 0:
            if count < out.shape[0]:
                out[count] = code
            count += 1
        t += np.uint64(1)
    return count


def _variable_csr(f: Formula) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    counts = np.zeros(f.n + 1, dtype=np.int64)
    for clause in f.clauses:
        for v, _ in clause:
            counts[v + 1] += 1
    ptr = np.cumsum(counts)
    cls = np.zeros(ptr[-1], dtype=np.int64)
    sgn = np.zeros(ptr[-1], dtype=np.int8)
    cursor = ptr[:-1].copy()
    init_true = np.zeros(f.m, dtype=np.int64)
    for ci, clause in enumerate(f.clauses):
        for v, s in clause:
            cls[cursor[v]] = ci
            sgn[cursor[v]] = s
            cursor[v] += 1
        init_true[ci] = sum(1 for _, s in clause if s < 0)
    return ptr, cls, sgn, init_true


def solution_codes(f: Formula, n_cap: int = DEFAULT_N_CAP) -> np.ndarray:
    """Sorted integer codes of all satisfying assignments (x_0 in the MSB)."""
    if f.n > n_cap:
        raise EnumerationRefusedError(f"n={f.n} exceeds cap {n_cap}")
    ptr, cls, sgn, init_true = _variable_csr(f)
    probe = np.zeros(0, dtype=np.uint64)
    needed = _gray_scan(f.n, ptr, cls, sgn, init_true, probe)
    if needed == 0:
        return probe
    out = np.zeros(needed, dtype=np.uint64)
    _gray_scan(f.n, ptr, cls, sgn, init_true, out)
    out.sort()
    return out


def decode_assignment(code: int, n: int) -> np.ndarray:
    bits = np.zeros(n, dtype=bool)
    for i in range(n):
        bits[i] = (int(code) >> (n - 1 - i)) & 1 == 1
    return bits


def encode_assignment(bits) -> int:
    code = 0
    for b in np.asarray(bits, dtype=bool):
        code = (code << 1) | int(b)
    return code


def enumerate_solutions(f: Formula, n_cap: int = DEFAULT_N_CAP) -> list[np.ndarray]:
    """All satisfying assignments in lexicographic order (exhaustive scan)."""
    return [decode_assignment(c, f.n) for c in solution_codes(f, n_cap)]


@dataclass
class ClusterReport:
    """Solutions partitioned into Hamming-distance-1 connected components."""

    solutions: list[np.ndarray]
    clusters: list[list[int]]          # indices into solutions
    frozen_vars: list[tuple[int, ...]]  # constant across the cluster
    free_vars: list[tuple[int, ...]]    # take both values within the cluster

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def cluster_solutions(solutions: list) -> ClusterReport:
    """Group distinct equal-length assignments by single-flip connectivity."""
    sols = [np.asarray(s, dtype=bool) for s in solutions]
    if not sols:
        return ClusterReport([], [], [], [])
    n = sols[0].shape[0]
    codes = []
    index = {}
    for i, s in enumerate(sols):
        if s.shape != (n,):
            raise ValueError("solutions must have equal length")
        code = encode_assignment(s)
        if code in index:
            raise ValueError("solutions must be distinct")
        index[code] = i
        codes.append(code)

    uf = UnionFind(len(sols))
    for i, code in enumerate(codes):
        for v in range(n):
            neighbor = code ^ (1 << (n - 1 - v))
            j = index.get(neighbor)
            if j is not None and j > i:
                uf.union(i, j)

    groups: dict[int, list[int]] = {}
    for i in range(len(sols)):
        groups.setdefault(uf.find(i), []).append(i)
    clusters = sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])

    frozen_vars, free_vars = [], []
    for members in clusters:
        stack = np.stack([sols[i] for i in members])
        constant = stack.min(axis=0) == stack.max(axis=0)
        frozen_vars.append(tuple(int(v) for v in np.flatnonzero(constant)))
        free_vars.append(tuple(int(v) for v in np.flatnonzero(~constant)))
    return ClusterReport(sols, clusters, frozen_vars, free_vars)


def cluster_report(f: Formula, n_cap: int = DEFAULT_N_CAP) -> ClusterReport:
    """Enumerate and cluster all solutions of a small formula."""
    report = cluster_solutions(enumerate_solutions(f, n_cap))
    for sol in report.solutions:
        sat, _ = evaluate(f, sol)
        assert sat
    return report


def block_cluster(f: Formula, cluster: list, chosen=None) -> Formula:
    """Append the clause violated exactly on the chosen frozen values.

    `cluster` holds the solutions of one cluster; `chosen` selects k of its
    frozen variables (defaults to the k lowest).  Every solution of the
    cluster violates only the new clause afterwards, so its unweighted
    energy rises by exactly one while the basin shape is preserved.
    """
    sols = [np.asarray(s, dtype=bool) for s in cluster]
    if not sols:
        raise CannotBlockError("empty cluster")
    stack = np.stack(sols)
    constant = stack.min(axis=0) == stack.max(axis=0)
    frozen = [int(v) for v in np.flatnonzero(constant)]
    if len(frozen) < f.k:
        raise CannotBlockError(
            f"cluster has {len(frozen)} frozen variables, need {f.k}")
    if chosen is None:
        chosen = frozen[:f.k]
    chosen = [int(v) for v in chosen]
    if len(chosen) != f.k or len(set(chosen)) != f.k:
        raise CannotBlockError(f"chosen must name {f.k} distinct variables")
    if any(v not in frozen for v in chosen):
        raise CannotBlockError("chosen variables must all be frozen")
    values = sols[0]
    clause = [(v, -1 if values[v] else 1) for v in chosen]
    return add_clause(f, clause)


def _sweep_point_seed(seed: int, n: int, k: int, alpha: float) -> int:
    return fnv1a64(f"sweep:{seed}:{n}:{k}:{alpha!r}".encode("ascii"))


def count_clusters(f: Formula, n_cap: int = DEFAULT_N_CAP) -> int:
    """Number of solution clusters; zero for unsatisfiable formulas."""
    codes = solution_codes(f, n_cap)
    if codes.size == 0:
        return 0
    index = {int(c): i for i, c in enumerate(codes)}
    uf = UnionFind(codes.size)
    components = codes.size
    for i, code in enumerate(codes):
        code = int(code)
        for v in range(f.n):
            j = index.get(code ^ (1 << (f.n - 1 - v)))
            if j is not None and j > i and uf.union(i, j):
                components -= 1
    return components


def cluster_sweep(alphas, ns, count: int, seed: int, k: int = 3,
                  satisfiable_only: bool = False,
                  n_cap: int = DEFAULT_N_CAP) -> list[dict]:
    """Mean cluster count over `count` random instances per (alpha, n) point.

    Unsatisfiable instances contribute n_c = 0 unless satisfiable_only is
    set, in which case they are dropped from the average.  alpha = 0 rows
    are the empty formula, whose single cluster is the whole cube.
    """
    from .formula import EnsembleSpec, random_ksat

    rows = []
    for n in ns:
        if n > n_cap:
            raise EnumerationRefusedError(f"n={n} exceeds cap {n_cap}")
        for alpha in alphas:
            if alpha == 0:
                rows.append({"alpha": float(alpha), "n": int(n), "mean_nc": 1.0,
                             "stderr": 0.0, "count": int(count)})
                continue
            spec = EnsembleSpec(n=n, k=k, alpha=float(alpha), count=count,
                                seed=_sweep_point_seed(seed, n, k, float(alpha)))
            values = []
            for idx in range(count):
                nc = count_clusters(random_ksat(spec, idx), n_cap)
                if satisfiable_only and nc == 0:
                    continue
                values.append(nc)
            if not values:
                rows.append({"alpha": float(alpha), "n": int(n), "mean_nc": math.nan,
                             "stderr": math.nan, "count": 0})
                continue
            arr = np.asarray(values, dtype=np.float64)
            stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
            rows.append({"alpha": float(alpha), "n": int(n),
                         "mean_nc": float(arr.mean()), "stderr": stderr,
                         "count": int(arr.size)})
    return rows


def sweep_csv(rows: list[dict]) -> str:
    lines = ["alpha,n,mean_nc,stderr,count"]
    for r in rows:
        lines.append(f"{r['alpha']!r},{r['n']},{r['mean_nc']!r},"
                     f"{r['stderr']!r},{r['count']}")
    return "\n".join(lines) + "\n"
